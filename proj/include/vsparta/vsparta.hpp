#pragma once

#include "vsparta/binary_io.hpp"
#include "vsparta/corpus.hpp"
#include "vsparta/encoder.hpp"
#include "vsparta/error.hpp"
#include "vsparta/evalbench.hpp"
#include "vsparta/index.hpp"
#include "vsparta/numerics.hpp"
#include "vsparta/scorer.hpp"
#include "vsparta/trainer.hpp"
#include "vsparta/transformer.hpp"
