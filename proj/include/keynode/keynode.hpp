#pragma once

// Umbrella header: the whole library.
#include "keynode/common.hpp"
#include "keynode/io.hpp"
#include "keynode/graph.hpp"
#include "keynode/diffusion.hpp"
#include "keynode/centrality.hpp"
#include "keynode/labeling.hpp"
#include "keynode/features.hpp"
#include "keynode/tree.hpp"
#include "keynode/models.hpp"
#include "keynode/evaluation.hpp"
#include "keynode/importance.hpp"
#include "keynode/pipeline.hpp"
