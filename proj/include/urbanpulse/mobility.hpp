#pragma once

#include "urbanpulse/mobility/graph_builder.hpp"
#include "urbanpulse/mobility/io.hpp"
#include "urbanpulse/mobility/normalize.hpp"
#include "urbanpulse/mobility/types.hpp"
#include "urbanpulse/mobility/windows.hpp"
