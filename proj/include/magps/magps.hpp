#pragma once

#include "magps/numerics.hpp"
#include "magps/lq_game.hpp"
#include "magps/guided_lq.hpp"
#include "magps/finite_lq.hpp"
#include "magps/envs.hpp"
#include "magps/local_lq.hpp"
#include "magps/net.hpp"
#include "magps/parallel.hpp"
#include "magps/trainer.hpp"
#include "magps/io.hpp"
#include "magps/svg.hpp"
#include "magps/commands.hpp"
#include "magps/selftest.hpp"
#include "magps/run.hpp"
