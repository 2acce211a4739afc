#include "cirmask/transformer.hpp"

#include "cirmask/error.hpp"
#include "cirmask/safetensors.hpp"

#include <cmath>
#include <limits>

namespace cirmask {

namespace {

Mat linear(const Mat& x, const Mat& w, const RowVec& b) {
    Mat y = x * w.transpose();
    y.rowwise() += b;
    return y;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

} // namespace

Mat layer_norm(const Mat& x, const LayerNormWeights& w) {
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const RowVec centered = x.row(i).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.cols());
        const double rstd = 1.0 / std::sqrt(var + w.eps);
        y.row(i) = (centered * rstd).cwiseProduct(w.gamma) + w.beta;
    }
    return y;
}

Mat layer_norm_backward(const Mat& x, const LayerNormWeights& w, const Mat& grad_y) {
    Mat gx(x.rows(), x.cols());
    const auto n = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const RowVec centered = x.row(i).array() - mean;
        const double var = centered.squaredNorm() / n;
        const double rstd = 1.0 / std::sqrt(var + w.eps);
        const RowVec xhat = centered * rstd;
        const RowVec gxhat = grad_y.row(i).cwiseProduct(w.gamma);
        const double mean_g = gxhat.mean();
        const double mean_gx = gxhat.cwiseProduct(xhat).mean();
        gx.row(i) = rstd * (gxhat.array() - mean_g - xhat.array() * mean_gx).matrix();
    }
    return gx;
}

LayerNormWeights load_layer_norm(const SafeTensors& st, const std::string& prefix, double eps) {
    LayerNormWeights w;
    w.gamma = st.vector(prefix + ".weight").transpose();
    w.beta = st.vector(prefix + ".bias").transpose();
    w.eps = eps;
    return w;
}

TransformerStack::TransformerStack(std::vector<BlockWeights> layers, int heads, Activation act)
    : layers_(std::move(layers)), heads_(heads), act_(act) {
    if (heads_ < 1) {
        throw ConfigError("transformer: heads must be >= 1");
    }
    for (const auto& l : layers_) {
        if (l.wq.cols() % heads_ != 0 || l.wq.rows() != l.wq.cols()) {
            throw ConfigError("transformer: width not divisible by head count");
        }
    }
}

TransformerStack TransformerStack::load(const SafeTensors& st, const std::string& prefix, int heads,
                                        Activation act, double eps) {
    std::vector<BlockWeights> layers;
    for (int i = 0;; ++i) {
        const std::string p = prefix + ".layers." + std::to_string(i);
        if (!st.contains(p + ".self_attn.q_proj.weight")) {
            break;
        }
        BlockWeights b;
        b.ln1 = load_layer_norm(st, p + ".layer_norm1", eps);
        b.ln2 = load_layer_norm(st, p + ".layer_norm2", eps);
        b.wq = st.matrix(p + ".self_attn.q_proj.weight");
        b.wk = st.matrix(p + ".self_attn.k_proj.weight");
        b.wv = st.matrix(p + ".self_attn.v_proj.weight");
        b.wo = st.matrix(p + ".self_attn.out_proj.weight");
        b.bq = st.vector(p + ".self_attn.q_proj.bias").transpose();
        b.bk = st.vector(p + ".self_attn.k_proj.bias").transpose();
        b.bv = st.vector(p + ".self_attn.v_proj.bias").transpose();
        b.bo = st.vector(p + ".self_attn.out_proj.bias").transpose();
        b.fc1 = st.matrix(p + ".mlp.fc1.weight");
        b.fc2 = st.matrix(p + ".mlp.fc2.weight");
        b.b1 = st.vector(p + ".mlp.fc1.bias").transpose();
        b.b2 = st.vector(p + ".mlp.fc2.bias").transpose();
        layers.push_back(std::move(b));
    }
    if (layers.empty()) {
        throw ConfigError("no transformer layers found under '" + prefix + "'");
    }
    return TransformerStack(std::move(layers), heads, act);
}

int TransformerStack::width() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.front().wq.cols());
}

Mat TransformerStack::activate(const Mat& pre) const {
    if (act_ == Activation::quick_gelu) {
        return pre.unaryExpr([](double a) { return a * sigmoid(1.702 * a); });
    }
    return pre.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::erf(a * inv_sqrt2)); });
}

Mat TransformerStack::activate_grad(const Mat& pre) const {
    if (act_ == Activation::quick_gelu) {
        return pre.unaryExpr([](double a) {
            const double s = sigmoid(1.702 * a);
            return s + 1.702 * a * s * (1.0 - s);
        });
    }
    return pre.unaryExpr([](double a) {
        return 0.5 * (1.0 + std::erf(a * inv_sqrt2)) + a * inv_sqrt2pi * std::exp(-0.5 * a * a);
    });
}

Mat TransformerStack::forward(const Mat& x_in, bool causal, Trace* trace) const {
    Mat x = x_in;
    const auto tokens = x.rows();
    const int hd = width() / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (trace) {
        trace->layers.clear();
        trace->causal = causal;
    }
    for (const auto& l : layers_) {
        LayerTrace lt;
        lt.input = x;
        lt.ln1 = layer_norm(x, l.ln1);
        lt.q = linear(lt.ln1, l.wq, l.bq) * scale;
        lt.k = linear(lt.ln1, l.wk, l.bk);
        lt.v = linear(lt.ln1, l.wv, l.bv);
        lt.context.resize(tokens, width());
        for (int h = 0; h < heads_; ++h) {
            Mat s = lt.q.middleCols(h * hd, hd) * lt.k.middleCols(h * hd, hd).transpose();
            for (Eigen::Index i = 0; i < tokens; ++i) {
                if (causal) {
                    for (Eigen::Index j = i + 1; j < tokens; ++j) {
                        s(i, j) = -std::numeric_limits<double>::infinity();
                    }
                }
                const double m = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - m).exp().matrix();
                s.row(i) /= s.row(i).sum();
            }
            lt.context.middleCols(h * hd, hd) = s * lt.v.middleCols(h * hd, hd);
            lt.attention.push_back(std::move(s));
        }
        lt.mid = x + linear(lt.context, l.wo, l.bo);
        lt.ln2 = layer_norm(lt.mid, l.ln2);
        lt.fc1_pre = linear(lt.ln2, l.fc1, l.b1);
        x = lt.mid + linear(activate(lt.fc1_pre), l.fc2, l.b2);
        if (trace) {
            trace->layers.push_back(std::move(lt));
        }
    }
    return x;
}

Mat TransformerStack::backward(const Trace& trace, const Mat& grad_out, int stop_layer,
                               std::vector<std::vector<Mat>>* attention_grads) const {
    if (trace.layers.size() != layers_.size()) {
        throw InvalidInput("transformer backward: trace does not match the stack");
    }
    const int hd = width() / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (attention_grads) {
        attention_grads->assign(layers_.size(), {});
    }
    Mat g = grad_out;
    for (int li = depth() - 1; li >= stop_layer; --li) {
        const auto& l = layers_[static_cast<std::size_t>(li)];
        const auto& lt = trace.layers[static_cast<std::size_t>(li)];

        // MLP branch: x = mid + fc2(act(fc1(ln2(mid))))
        const Mat g_act = g * l.fc2;
        const Mat g_pre = g_act.cwiseProduct(activate_grad(lt.fc1_pre));
        const Mat g_ln2 = g_pre * l.fc1;
        Mat g_mid = g + layer_norm_backward(lt.mid, l.ln2, g_ln2);

        // Attention branch: mid = input + out_proj(context)
        const Mat g_ctx = g_mid * l.wo;
        Mat g_q(lt.q.rows(), lt.q.cols());
        Mat g_k(lt.k.rows(), lt.k.cols());
        Mat g_v(lt.v.rows(), lt.v.cols());
        for (int h = 0; h < heads_; ++h) {
            const Mat& a = lt.attention[static_cast<std::size_t>(h)];
            const Mat g_o = g_ctx.middleCols(h * hd, hd);
            const Mat g_a = g_o * lt.v.middleCols(h * hd, hd).transpose();
            g_v.middleCols(h * hd, hd) = a.transpose() * g_o;
            Mat g_s = a.cwiseProduct(g_a);
            const Vec row_dot = g_s.rowwise().sum();
            g_s -= a.cwiseProduct(row_dot.replicate(1, a.cols()));
            g_q.middleCols(h * hd, hd) = g_s * lt.k.middleCols(h * hd, hd) * scale;
            g_k.middleCols(h * hd, hd) = g_s.transpose() * lt.q.middleCols(h * hd, hd);
            if (attention_grads) {
                (*attention_grads)[static_cast<std::size_t>(li)].push_back(g_a);
            }
        }
        const Mat g_ln1 = g_q * l.wq + g_k * l.wk + g_v * l.wv;
        g = g_mid + layer_norm_backward(lt.input, l.ln1, g_ln1);
    }
    return g;
}

} // namespace cirmask
