#pragma once

#include "urbanpulse/transfer/checkpoint.hpp"
#include "urbanpulse/transfer/curves.hpp"
#include "urbanpulse/transfer/dataset.hpp"
#include "urbanpulse/transfer/evaluate.hpp"
#include "urbanpulse/transfer/optimizer.hpp"
#include "urbanpulse/transfer/split.hpp"
#include "urbanpulse/transfer/trainer.hpp"
