#pragma once

#include "urbanpulse/numerics/gradcheck.hpp"
#include "urbanpulse/numerics/ops.hpp"
#include "urbanpulse/numerics/random.hpp"
#include "urbanpulse/numerics/tensor.hpp"
