#pragma once

// Everything needed to encode, decode and evaluate images.

#include "marm/bitstream.hpp"
#include "marm/decoder.hpp"
#include "marm/encoder.hpp"
#include "marm/image.hpp"
#include "marm/metrics.hpp"
#include "marm/pipeline.hpp"
