#pragma once

#include "roadgnn/common.hpp"
#include "roadgnn/dense.hpp"
#include "roadgnn/embedding.hpp"
#include "roadgnn/features.hpp"
#include "roadgnn/geo.hpp"
#include "roadgnn/gnn.hpp"
#include "roadgnn/graph.hpp"
#include "roadgnn/raster.hpp"
#include "roadgnn/training.hpp"
