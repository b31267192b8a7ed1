#pragma once

#include "quiver/config.hpp"
#include "quiver/distance.hpp"
#include "quiver/embedding.hpp"
#include "quiver/error.hpp"
#include "quiver/faithfulness.hpp"
#include "quiver/graph.hpp"
#include "quiver/hash.hpp"
#include "quiver/paths.hpp"
#include "quiver/perturbation.hpp"
#include "quiver/philox.hpp"
#include "quiver/regression.hpp"
#include "quiver/report.hpp"
#include "quiver/sensitivity.hpp"
#include "quiver/simulator.hpp"
#include "quiver/trace.hpp"
#include "quiver/trajectory.hpp"
#include "quiver/typed_value.hpp"
