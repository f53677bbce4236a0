#pragma once

// Umbrella header for the library (the CLI layer lives in topsal/cli/).

#include "topsal/crf.hpp"
#include "topsal/errors.hpp"
#include "topsal/eval.hpp"
#include "topsal/image.hpp"
#include "topsal/imgfeat.hpp"
#include "topsal/parallel.hpp"
#include "topsal/pipeline.hpp"
#include "topsal/pyramid.hpp"
#include "topsal/random.hpp"
#include "topsal/sparsecode.hpp"
#include "topsal/svm.hpp"
#include "topsal/synthetic.hpp"
