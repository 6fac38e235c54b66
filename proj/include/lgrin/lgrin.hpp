#pragma once

#include "lgrin/adjacency.hpp"
#include "lgrin/checkpoint.hpp"
#include "lgrin/error.hpp"
#include "lgrin/graph_data.hpp"
#include "lgrin/layers.hpp"
#include "lgrin/model.hpp"
#include "lgrin/objective.hpp"
#include "lgrin/tensor.hpp"
#include "lgrin/training.hpp"
