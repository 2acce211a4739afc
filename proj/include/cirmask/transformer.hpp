#pragma once

#include "cirmask/tensor.hpp"

#include <string>
#include <vector>

namespace cirmask {

class SafeTensors;

struct LayerNormWeights {
    RowVec gamma;
    RowVec beta;
    double eps = 1e-5;
};

enum class Activation { quick_gelu, gelu };

// Weights of one pre-LN transformer block. Linear weights use the
// [out, in] layout of torch checkpoints.
struct BlockWeights {
    LayerNormWeights ln1, ln2;
    Mat wq, wk, wv, wo;
    RowVec bq, bk, bv, bo;
    Mat fc1, fc2;
    RowVec b1, b2;
};

Mat layer_norm(const Mat& x, const LayerNormWeights& w);
Mat layer_norm_backward(const Mat& x, const LayerNormWeights& w, const Mat& grad_y);

LayerNormWeights load_layer_norm(const SafeTensors& st, const std::string& prefix, double eps);

// Frozen stack of transformer blocks. Backward passes produce gradients with
// respect to the stack input only; weights never receive gradients.
class TransformerStack {
public:
    struct LayerTrace {
        Mat input;
        Mat ln1;
        Mat q, k, v; // q already scaled by 1/sqrt(head_dim)
        std::vector<Mat> attention; // per head, T × T
        Mat context;
        Mat mid; // input + attention branch
        Mat ln2;
        Mat fc1_pre;
    };

    struct Trace {
        std::vector<LayerTrace> layers;
        bool causal = false;
    };

    TransformerStack() = default;
    TransformerStack(std::vector<BlockWeights> layers, int heads, Activation act);

    static TransformerStack load(const SafeTensors& st, const std::string& prefix, int heads,
                                 Activation act, double eps);

    int width() const;
    int heads() const { return heads_; }
    int depth() const { return static_cast<int>(layers_.size()); }

    Mat forward(const Mat& x, bool causal, Trace* trace = nullptr) const;

    // Pulls `grad_out` back to the input of layer `stop_layer` (0 = stack
    // input). When `attention_grads` is given it receives, for every layer
    // visited, the per-head gradient w.r.t. the attention probabilities,
    // indexed by layer.
    Mat backward(const Trace& trace, const Mat& grad_out, int stop_layer = 0,
                 std::vector<std::vector<Mat>>* attention_grads = nullptr) const;

    const std::vector<BlockWeights>& layers() const { return layers_; }

private:
    Mat activate(const Mat& pre) const;
    Mat activate_grad(const Mat& pre) const;

    std::vector<BlockWeights> layers_;
    int heads_ = 1;
    Activation act_ = Activation::quick_gelu;
};

} // namespace cirmask
