#pragma once

// Umbrella header for the library. The command-line front end (cli.hpp) is
// separate because it needs CLI11.

#include "config.hpp"
#include "dataset.hpp"
#include "encoders.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "fusion.hpp"
#include "image_io.hpp"
#include "losses.hpp"
#include "matching.hpp"
#include "model.hpp"
#include "random.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "weights.hpp"
