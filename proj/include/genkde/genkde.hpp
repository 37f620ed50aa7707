#pragma once

#include "genkde/analysis.hpp"
#include "genkde/bandwidth.hpp"
#include "genkde/checkpoint.hpp"
#include "genkde/config.hpp"
#include "genkde/core.hpp"
#include "genkde/density.hpp"
#include "genkde/divergence.hpp"
#include "genkde/nn.hpp"
#include "genkde/novelty.hpp"
#include "genkde/synthetic.hpp"
#include "genkde/tensor_io.hpp"
#include "genkde/trainer.hpp"
