#pragma once

// Per-process evaluation caches, shared across evaluations that reuse the
// same frozen local/context checkpoints (the ablation grid in particular).

#include "glcn/evaluator.hpp"

namespace glcn {

struct EvalCaches {
    SaliencyCache saliency;     // valid for one context checkpoint
    EmbeddingCache embeddings;  // valid for one local checkpoint + eval seed + patch count
};

} // namespace glcn
