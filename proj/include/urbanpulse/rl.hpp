#pragma once

#include "urbanpulse/rl/action.hpp"
#include "urbanpulse/rl/env.hpp"
#include "urbanpulse/rl/policy.hpp"
#include "urbanpulse/rl/ppo.hpp"
#include "urbanpulse/rl/reward.hpp"
#include "urbanpulse/rl/state.hpp"
