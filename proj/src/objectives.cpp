#include "cirmask/objectives.hpp"

#include "cirmask/error.hpp"

#include <cmath>

namespace cirmask {

namespace {

void check_inputs(const FeatureBatch& a, const FeatureBatch& b, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("loss.temperature must be > 0");
    }
    if (a.size() == 0 || a.size() != b.size() || a.dim() != b.dim()) {
        throw InvalidInput("info-nce: feature batches must be non-empty and equally shaped");
    }
    if (!a.normalized || !b.normalized || !rows_unit_norm(a.vectors) || !rows_unit_norm(b.vectors)) {
        throw ContractViolation("info-nce: features must be unit-normalized");
    }
}

// Row-wise log-softmax cross-entropy against the diagonal, with the
// gradient of the mean loss w.r.t. the logits.
double diagonal_cross_entropy(const Mat& logits, Mat* grad) {
    const auto n = logits.rows();
    double loss = 0.0;
    if (grad) grad->resize(n, logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const RowVec shifted = logits.row(i).array() - m;
        const double lse = std::log(shifted.array().exp().sum());
        loss -= shifted(i) - lse;
        if (grad) {
            grad->row(i) = (shifted.array() - lse).exp().matrix();
            (*grad)(i, i) -= 1.0;
        }
    }
    if (grad) *grad /= static_cast<double>(n);
    return loss / static_cast<double>(n);
}

} // namespace

LossFragment symmetric_info_nce(const FeatureBatch& a, const FeatureBatch& b, double temperature) {
    check_inputs(a, b, temperature);
    const Mat logits = a.vectors * b.vectors.transpose() / temperature;
    LossFragment f;
    f.a_to_b = diagonal_cross_entropy(logits, nullptr);
    f.b_to_a = diagonal_cross_entropy(logits.transpose(), nullptr);
    f.mean = 0.5 * f.a_to_b + 0.5 * f.b_to_a;
    return f;
}

InfoNceGradient symmetric_info_nce_grad(const FeatureBatch& a, const FeatureBatch& b, double temperature) {
    check_inputs(a, b, temperature);
    const Mat logits = a.vectors * b.vectors.transpose() / temperature;
    Mat g_ab;
    Mat g_ba;
    InfoNceGradient out;
    out.loss.a_to_b = diagonal_cross_entropy(logits, &g_ab);
    out.loss.b_to_a = diagonal_cross_entropy(logits.transpose(), &g_ba);
    out.loss.mean = 0.5 * out.loss.a_to_b + 0.5 * out.loss.b_to_a;
    const Mat g_logits = 0.5 * (g_ab + g_ba.transpose()) / temperature;
    out.grad_a = g_logits * b.vectors;
    out.grad_b = g_logits.transpose() * a.vectors;
    return out;
}

LossBundle total_loss(const LossFragment& qt, const LossFragment& org, double alpha) {
    if (!(alpha >= 0.0)) {
        throw ConfigError("loss.alpha must be >= 0");
    }
    LossBundle b;
    b.alpha = alpha;
    b.qt = qt.mean;
    b.qt_i2t = qt.a_to_b;
    b.qt_t2i = qt.b_to_a;
    b.org = org.mean;
    b.org_i2t = org.a_to_b;
    b.org_t2i = org.b_to_a;
    b.total = alpha * b.qt + b.org;
    return b;
}

} // namespace cirmask
