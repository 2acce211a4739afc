#include "cirmask/clip_backbone.hpp"

#include "cirmask/error.hpp"
#include "cirmask/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

namespace cirmask {

namespace fs = std::filesystem;

namespace {

struct ArchSpec {
    int token_dim;
    int feature_dim;
    int patch;
};

std::optional<ArchSpec> arch_for(const std::string& name) {
    if (name == "vit-l-14") return ArchSpec{768, 768, 14};
    if (name == "vit-b-32") return ArchSpec{512, 512, 32};
    return std::nullopt;
}

Activation parse_activation(const nlohmann::json& cfg) {
    const auto act = cfg.value("hidden_act", std::string("quick_gelu"));
    if (act == "quick_gelu") return Activation::quick_gelu;
    if (act == "gelu") return Activation::gelu;
    throw ConfigError("unsupported hidden_act '" + act + "'");
}

} // namespace

ClipBackbone ClipBackbone::load(const std::string& dir, const std::string& expected_name) {
    const fs::path root(dir);
    std::ifstream cf(root / "config.json");
    if (!cf) {
        throw ConfigError("missing " + (root / "config.json").string());
    }
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(cf);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config.json: " + std::string(e.what()));
    }
    const auto& tcfg = cfg.at("text_config");
    const auto& vcfg = cfg.at("vision_config");

    const auto st = SafeTensors::read((root / "model.safetensors").string());

    BackboneInfo info;
    info.name = expected_name;
    Mat tok = st.matrix("text_model.embeddings.token_embedding.weight");
    Mat tpos = st.matrix("text_model.embeddings.position_embedding.weight");
    info.context_length = static_cast<int>(tpos.rows());
    info.token_dim = static_cast<int>(tok.cols());
    Mat tproj = st.matrix("text_projection.weight");
    info.feature_dim = static_cast<int>(tproj.rows());

    ClipBackbone b(info, BpeTokenizer::from_files((root / "vocab.json").string(),
                                                  (root / "merges.txt").string(), info.context_length));
    b.token_embedding_ = std::move(tok);
    b.text_positional_ = std::move(tpos);
    b.text_projection_ = std::move(tproj);
    const double teps = tcfg.value("layer_norm_eps", 1e-5);
    b.text_stack_ = TransformerStack::load(st, "text_model.encoder", tcfg.at("num_attention_heads").get<int>(),
                                           parse_activation(tcfg), teps);
    b.text_final_ln_ = load_layer_norm(st, "text_model.final_layer_norm", teps);

    const double veps = vcfg.value("layer_norm_eps", 1e-5);
    b.patch_size_ = vcfg.at("patch_size").get<int>();
    b.info_.resolution = vcfg.at("image_size").get<int>();
    if (b.patch_size_ < 1 || b.info_.resolution % b.patch_size_ != 0) {
        throw ConfigError("vision image_size must be a multiple of patch_size");
    }
    b.info_.patch_grid = b.info_.resolution / b.patch_size_;
    b.class_embedding_ = st.vector("vision_model.embeddings.class_embedding").transpose();
    b.patch_weight_ = st.matrix("vision_model.embeddings.patch_embedding.weight");
    b.vision_positional_ = st.matrix("vision_model.embeddings.position_embedding.weight");
    b.vision_pre_ln_ = load_layer_norm(st, "vision_model.pre_layrnorm", veps);
    b.vision_stack_ = TransformerStack::load(st, "vision_model.encoder", vcfg.at("num_attention_heads").get<int>(),
                                             parse_activation(vcfg), veps);
    b.vision_post_ln_ = load_layer_norm(st, "vision_model.post_layernorm", veps);
    b.visual_projection_ = st.matrix("visual_projection.weight");
    b.info_.logit_scale = st.contains("logit_scale") ? std::exp(st.scalar("logit_scale")) : 100.0;

    const int grid = b.info_.patch_grid;
    if (b.patch_weight_.cols() != 3L * b.patch_size_ * b.patch_size_ ||
        b.vision_positional_.rows() != 1L + grid * grid || b.visual_projection_.rows() != b.info_.feature_dim) {
        throw ConfigError("vision tower shapes are inconsistent with config.json");
    }

    if (auto arch = arch_for(expected_name)) {
        if (arch->token_dim != b.info_.token_dim || arch->feature_dim != b.info_.feature_dim ||
            arch->patch != b.patch_size_) {
            throw ConfigError("weights at " + dir + " do not match the " + expected_name + " architecture");
        }
    }

    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& name : st.names()) {
        const auto v = st.values(name);
        h = checksum_bytes(name.data(), name.size(), h);
        h = checksum_bytes(v.data(), v.size() * sizeof(double), h);
    }
    b.checksum_ = h;
    return b;
}

EmbeddedSequence ClipBackbone::embed_tokens(const TokenSequence& tokens) const {
    tokenizer_.validate(tokens);
    EmbeddedSequence seq;
    seq.length = tokens.length;
    seq.embeddings.resize(info_.context_length, info_.token_dim);
    for (int p = 0; p < info_.context_length; ++p) {
        const int id = tokens.ids[static_cast<std::size_t>(p)];
        if (id < 0 || id >= token_embedding_.rows()) {
            throw InvalidInput("token id out of vocabulary range");
        }
        seq.embeddings.row(p) = token_embedding_.row(id);
    }
    return seq;
}

Vec ClipBackbone::encode_rows(const Mat& embeddings, int end) const {
    if (end < 1 || end >= info_.context_length) {
        throw InvalidInput("end position out of range");
    }
    const Mat x = embeddings.topRows(end + 1) + text_positional_.topRows(end + 1);
    const Mat out = text_stack_.forward(x, true);
    const Mat pooled = layer_norm(out.row(end), text_final_ln_);
    Vec f = text_projection_ * pooled.transpose();
    return f / f.norm();
}

Mat ClipBackbone::encode_rows_backward(const Mat& embeddings, int end, const Vec& grad_feature) const {
    if (end < 1 || end >= info_.context_length) {
        throw InvalidInput("end position out of range");
    }
    const Mat x = embeddings.topRows(end + 1) + text_positional_.topRows(end + 1);
    TransformerStack::Trace trace;
    const Mat out = text_stack_.forward(x, true, &trace);
    const Mat last = out.row(end);
    const Mat pooled = layer_norm(last, text_final_ln_);
    const Vec f = text_projection_ * pooled.transpose();

    const Vec g_f = normalize_backward(f, grad_feature);
    const Mat g_pooled = (text_projection_.transpose() * g_f).transpose();
    Mat g_out = Mat::Zero(out.rows(), out.cols());
    g_out.row(end) = layer_norm_backward(last, text_final_ln_, g_pooled);
    Mat grad = Mat::Zero(embeddings.rows(), embeddings.cols());
    grad.topRows(end + 1) = text_stack_.backward(trace, g_out);
    return grad;
}

Mat ClipBackbone::patch_tokens(const Image& image) const {
    check_image(image);
    const int grid = info_.patch_grid;
    const int p = patch_size_;
    Mat patches(static_cast<Eigen::Index>(grid) * grid, 3L * p * p);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            const auto row = static_cast<Eigen::Index>(gy) * grid + gx;
            for (int c = 0; c < 3; ++c) {
                for (int ky = 0; ky < p; ++ky) {
                    for (int kx = 0; kx < p; ++kx) {
                        patches(row, (c * p + ky) * p + kx) = image.at(gy * p + ky, gx * p + kx, c);
                    }
                }
            }
        }
    }
    Mat tokens(patches.rows() + 1, patch_weight_.rows());
    tokens.row(0) = class_embedding_;
    tokens.bottomRows(patches.rows()) = patches * patch_weight_.transpose();
    return tokens + vision_positional_;
}

Vec ClipBackbone::image_pre_projection(const Image& image, TransformerStack::Trace* trace, Mat* stack_out) const {
    const Mat x = layer_norm(patch_tokens(image), vision_pre_ln_);
    Mat out = vision_stack_.forward(x, false, trace);
    const Mat pooled = layer_norm(out.row(0), vision_post_ln_);
    Vec f = visual_projection_ * pooled.transpose();
    if (stack_out) {
        *stack_out = std::move(out);
    }
    return f;
}

FeatureBatch ClipBackbone::encode_image(const ImageBatch& batch) const {
    FeatureBatch fb;
    fb.vectors.resize(batch.size(), info_.feature_dim);
    for (int i = 0; i < batch.size(); ++i) {
        fb.vectors.row(i) = image_pre_projection(batch.images[static_cast<std::size_t>(i)], nullptr, nullptr).transpose();
    }
    normalize_rows(fb.vectors);
    fb.normalized = true;
    return fb;
}

Mat ClipBackbone::image_relevance(const Image& image, const TokenSequence& text) const {
    const Vec txt = encode_text(text).vectors.row(0).transpose();
    TransformerStack::Trace trace;
    Mat out;
    const Vec f = image_pre_projection(image, &trace, &out);

    const Vec g_f = normalize_backward(f, txt);
    const Mat g_pooled = (visual_projection_.transpose() * g_f).transpose();
    Mat g_out = Mat::Zero(out.rows(), out.cols());
    g_out.row(0) = layer_norm_backward(out.row(0), vision_post_ln_, g_pooled);

    std::vector<std::vector<Mat>> attn_grads;
    const int last = vision_stack_.depth() - 1;
    vision_stack_.backward(trace, g_out, last, &attn_grads);

    const auto& attn = trace.layers[static_cast<std::size_t>(last)].attention;
    const auto& grads = attn_grads[static_cast<std::size_t>(last)];
    Mat cam = Mat::Zero(attn.front().rows(), attn.front().cols());
    for (std::size_t h = 0; h < attn.size(); ++h) {
        cam += grads[h].cwiseProduct(attn[h]).cwiseMax(0.0);
    }
    cam /= static_cast<double>(attn.size());

    const int grid = info_.patch_grid;
    Mat rel(grid, grid);
    for (int i = 0; i < grid * grid; ++i) {
        rel(i / grid, i % grid) = cam(0, i + 1);
    }
    return rel;
}

} // namespace cirmask
