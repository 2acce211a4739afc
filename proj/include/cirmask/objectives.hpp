#pragma once

#include "cirmask/backbone.hpp"

namespace cirmask {

// mean = (a_to_b + b_to_a) / 2. Direction a→b is the cross-entropy of the
// row-softmax of a·bᵀ / temperature against the diagonal.
struct LossFragment {
    double mean = 0.0;
    double a_to_b = 0.0;
    double b_to_a = 0.0;
};

struct InfoNceGradient {
    LossFragment loss;
    Mat grad_a; // d mean / d a
    Mat grad_b; // d mean / d b
};

struct LossBundle {
    double total = 0.0;
    double qt = 0.0;
    double org = 0.0;
    double qt_i2t = 0.0;
    double qt_t2i = 0.0;
    double org_i2t = 0.0;
    double org_t2i = 0.0;
    double alpha = 0.0;
};

// Throws ConfigError for temperature <= 0, ContractViolation when either side
// is not unit-normalized, InvalidInput on shape mismatch or empty batches.
LossFragment symmetric_info_nce(const FeatureBatch& a, const FeatureBatch& b, double temperature);
InfoNceGradient symmetric_info_nce_grad(const FeatureBatch& a, const FeatureBatch& b, double temperature);

// Image (original, unmasked) vs composed masked-pair query; i2t is image→query.
inline LossFragment query_target_loss(const FeatureBatch& target_images, const FeatureBatch& composed,
                                      double temperature) {
    return symmetric_info_nce(target_images, composed, temperature);
}

// Image vs "a photo of *" prompt built from the same image.
inline LossFragment original_loss(const FeatureBatch& images, const FeatureBatch& prompts, double temperature) {
    return symmetric_info_nce(images, prompts, temperature);
}

// total = alpha·qt + org. Throws ConfigError for alpha < 0.
LossBundle total_loss(const LossFragment& qt, const LossFragment& org, double alpha);

} // namespace cirmask
