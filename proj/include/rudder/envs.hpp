#pragma once

#include "rudder/envs/charge_discharge.hpp"
#include "rudder/envs/choice.hpp"
#include "rudder/envs/grid_world.hpp"
#include "rudder/envs/table_env.hpp"
#include "rudder/envs/trace_back.hpp"
