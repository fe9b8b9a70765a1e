#pragma once

// Core library: everything except scenario file parsing and trace output,
// which live in etl/scenario_io.hpp and pull in yaml-cpp and OpenSSL.

#include "etl/errors.hpp"
#include "etl/learning_trigger.hpp"
#include "etl/linalg.hpp"
#include "etl/lti.hpp"
#include "etl/protocol.hpp"
#include "etl/random.hpp"
#include "etl/scenario.hpp"
#include "etl/stopping_time.hpp"
#include "etl/sysid.hpp"
#include "etl/wire.hpp"
