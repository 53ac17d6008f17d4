#pragma once

#include "leafgraph/adam.hpp"
#include "leafgraph/binary_io.hpp"
#include "leafgraph/config.hpp"
#include "leafgraph/dataset.hpp"
#include "leafgraph/error.hpp"
#include "leafgraph/explain.hpp"
#include "leafgraph/gradcheck.hpp"
#include "leafgraph/graph.hpp"
#include "leafgraph/image.hpp"
#include "leafgraph/layers.hpp"
#include "leafgraph/linalg.hpp"
#include "leafgraph/metrics.hpp"
#include "leafgraph/model.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"
