#pragma once

#include "saft/autodiff.hpp"
#include "saft/config.hpp"
#include "saft/encoder.hpp"
#include "saft/graph.hpp"
#include "saft/io.hpp"
#include "saft/message_passing.hpp"
#include "saft/nn.hpp"
#include "saft/oracles.hpp"
#include "saft/pipeline.hpp"
#include "saft/rsvd.hpp"
#include "saft/sampling.hpp"
#include "saft/struct_embed.hpp"
#include "saft/synthetic.hpp"
#include "saft/verify.hpp"
#include "saft/tensor.hpp"
