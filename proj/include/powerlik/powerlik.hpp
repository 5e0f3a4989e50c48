#pragma once

#include "powerlik/baselines.hpp"
#include "powerlik/density.hpp"
#include "powerlik/elpd.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/fit.hpp"
#include "powerlik/formula.hpp"
#include "powerlik/glm.hpp"
#include "powerlik/harness.hpp"
#include "powerlik/io.hpp"
#include "powerlik/model.hpp"
#include "powerlik/optim.hpp"
#include "powerlik/rng.hpp"
#include "powerlik/select.hpp"
#include "powerlik/synth.hpp"
