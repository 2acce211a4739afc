#include "cirmask/training.hpp"

#include "cirmask/error.hpp"
#include "cirmask/safetensors.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace cirmask {

namespace fs = std::filesystem;

TrainConfig train_config_from(const ResolvedConfig& cfg) {
    TrainConfig t;
    t.batch_size = static_cast<int>(cfg.integer("train.batch_size"));
    t.epochs = static_cast<int>(cfg.integer("train.epochs"));
    t.learning_rate = cfg.number("train.learning_rate");
    t.weight_decay = cfg.number("train.weight_decay");
    t.beta1 = cfg.number("train.beta1");
    t.beta2 = cfg.number("train.beta2");
    t.eps = cfg.number("train.eps");
    t.lr_schedule = cfg.str("train.lr_schedule");
    t.grad_clip = cfg.number("train.grad_clip");
    t.alpha = cfg.number("loss.alpha");
    t.tau = cfg.number("mask.tau");
    t.temperature = cfg.is_auto("loss.temperature") ? 0.0 : cfg.number("loss.temperature");
    t.hidden_dim = cfg.is_auto("model.hidden_dim") ? 0 : static_cast<int>(cfg.integer("model.hidden_dim"));
    t.dropout = cfg.number("model.dropout");
    t.seed = static_cast<std::uint64_t>(cfg.integer("train.seed"));
    t.limit = static_cast<std::size_t>(cfg.integer("data.limit"));
    t.manifest = cfg.str("data.manifest");
    t.cache_dir = cfg.str("data.cache_dir");
    t.checkpoint_dir = cfg.str("train.checkpoint_dir");
    t.resume = cfg.str("train.resume");
    t.config_hash = cfg.hash();
    return t;
}

namespace {

BackboneOptions options_for(const ResolvedConfig& cfg, const std::string& name, const std::string& weights) {
    BackboneOptions o;
    o.name = name;
    o.weights_path = weights;
    o.stub_dim = static_cast<int>(cfg.integer("backbone.stub_dim"));
    o.stub_seed = static_cast<std::uint64_t>(cfg.integer("backbone.stub_seed"));
    return o;
}

} // namespace

std::shared_ptr<const Backbone> backbone_from(const ResolvedConfig& cfg) {
    return make_backbone(options_for(cfg, cfg.str("backbone.name"), cfg.str("backbone.weights_path")));
}

std::shared_ptr<const RelevanceProvider> relevance_provider_from(const ResolvedConfig& cfg,
                                                                 std::shared_ptr<const Backbone> backbone) {
    const int grid = backbone->info().patch_grid;
    if (cfg.str("mask.relevance_provider") == "stub") {
        return std::make_shared<StubRelevanceProvider>(grid, static_cast<std::uint64_t>(cfg.integer("train.seed")));
    }
    const std::string which = cfg.str("mask.relevance_backbone");
    std::shared_ptr<const Backbone> model;
    if (which == "same") {
        model = std::move(backbone);
    } else {
        if (which != "stub" && cfg.str("mask.relevance_weights_path").empty()) {
            throw ConfigError("mask.relevance_weights_path is required for relevance backbone " + which +
                              " (or set mask.relevance_backbone = same)");
        }
        model = make_backbone(options_for(cfg, which, cfg.str("mask.relevance_weights_path")));
    }
    return std::make_shared<GradientAttentionProvider>(std::move(model));
}

AdamW::AdamW(const InversionNetwork::Parameters& like, Options options) : options_(options) {
    for (const auto& p : like) {
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
    }
}

void AdamW::step(InversionNetwork::Parameters& params, const InversionNetwork::Parameters& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw InvalidInput("AdamW: parameter count mismatch");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& g = grads[i];
        // decoupled decay first, as torch does
        p *= 1.0 - lr * options_.weight_decay;
        m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
        v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
        const Mat denom = (v_[i] / bc2).cwiseSqrt().array() + options_.eps;
        p -= (lr / bc1) * m_[i].cwiseQuotient(denom);
    }
}

void AdamW::restore(InversionNetwork::Parameters m, InversionNetwork::Parameters v, long long steps) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw DataError("optimizer state does not match the network");
    }
    m_ = std::move(m);
    v_ = std::move(v);
    steps_ = steps;
}

namespace {

// round-trips exactly through std::stod
std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void save_checkpoint(const std::string& path, const InversionNetwork& net, const AdamW* optimizer,
                     const CheckpointMeta& meta) {
    SafeTensors st;
    const auto& names = InversionNetwork::parameter_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        st.put(names[i], net.parameters()[i]);
        if (optimizer) {
            st.put("optimizer.m." + names[i], optimizer->first_moment()[i]);
            st.put("optimizer.v." + names[i], optimizer->second_moment()[i]);
        }
    }
    const auto& d = net.dims();
    st.metadata = {
        {"format", "cirmask-inversion"},
        {"input_dim", std::to_string(d.input)},
        {"hidden_dim", std::to_string(d.hidden)},
        {"output_dim", std::to_string(d.output)},
        {"dropout", exact(net.dropout())},
        {"epoch", std::to_string(meta.epoch)},
        {"step", std::to_string(meta.step)},
        {"backbone", meta.backbone},
        {"backbone_fingerprint", meta.backbone_fingerprint},
        {"config_hash", meta.config_hash},
    };
    if (optimizer) {
        const auto& o = optimizer->options();
        st.metadata["optimizer_steps"] = std::to_string(optimizer->steps());
        st.metadata["weight_decay"] = exact(o.weight_decay);
        st.metadata["beta1"] = exact(o.beta1);
        st.metadata["beta2"] = exact(o.beta2);
        st.metadata["eps"] = exact(o.eps);
    }
    const std::string tmp = path + ".part";
    st.write(tmp);
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const BackboneInfo* backbone) {
    if (!fs::exists(path)) {
        throw ConfigError("checkpoint not found: " + path);
    }
    const SafeTensors st = SafeTensors::read(path);
    auto meta_int = [&](const std::string& key) -> long long {
        auto it = st.metadata.find(key);
        if (it == st.metadata.end()) throw DataError(path + ": checkpoint metadata lacks '" + key + "'");
        return std::stoll(it->second);
    };
    auto meta_str = [&](const std::string& key) {
        auto it = st.metadata.find(key);
        return it == st.metadata.end() ? std::string() : it->second;
    };
    InversionDims dims{static_cast<int>(meta_int("input_dim")), static_cast<int>(meta_int("hidden_dim")),
                       static_cast<int>(meta_int("output_dim"))};
    if (backbone && (dims.input != backbone->feature_dim || dims.output != backbone->token_dim)) {
        throw ConfigError("checkpoint " + path + " maps " + std::to_string(dims.input) + " -> " +
                          std::to_string(dims.output) + " but backbone " + backbone->name + " needs " +
                          std::to_string(backbone->feature_dim) + " -> " + std::to_string(backbone->token_dim));
    }
    const std::string dropout = meta_str("dropout");
    Checkpoint ck{InversionNetwork(dims, 0, dropout.empty() ? 0.0 : std::stod(dropout)), std::nullopt, {}};
    const auto& names = InversionNetwork::parameter_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!st.contains(names[i])) throw DataError(path + ": missing tensor " + names[i]);
        Mat m = st.matrix(names[i]);
        auto& p = ck.net.parameters()[i];
        if (m.rows() != p.rows() || m.cols() != p.cols()) {
            throw DataError(path + ": tensor " + names[i] + " has the wrong shape");
        }
        p = std::move(m);
    }
    if (st.contains("optimizer.m." + names[0])) {
        AdamW::Options o;
        o.weight_decay = std::stod(meta_str("weight_decay"));
        o.beta1 = std::stod(meta_str("beta1"));
        o.beta2 = std::stod(meta_str("beta2"));
        o.eps = std::stod(meta_str("eps"));
        AdamW opt(ck.net.parameters(), o);
        InversionNetwork::Parameters m, v;
        for (const auto& n : names) {
            m.push_back(st.matrix("optimizer.m." + n));
            v.push_back(st.matrix("optimizer.v." + n));
        }
        opt.restore(std::move(m), std::move(v), meta_int("optimizer_steps"));
        ck.optimizer = std::move(opt);
    }
    ck.meta.epoch = static_cast<int>(meta_int("epoch"));
    ck.meta.step = meta_int("step");
    ck.meta.backbone = meta_str("backbone");
    ck.meta.backbone_fingerprint = meta_str("backbone_fingerprint");
    ck.meta.config_hash = meta_str("config_hash");
    return ck;
}

SkipCounts& SkipCounts::operator+=(const SkipCounts& o) {
    no_maskable_word += o.no_maskable_word;
    relevance_unavailable += o.relevance_unavailable;
    query_too_long += o.query_too_long;
    undecodable += o.undecodable;
    return *this;
}

PreparedBatch prepare_batch(std::span<const TrainingSample> samples, const Backbone& backbone,
                            const PosTagger& tagger, const RelevanceProvider& provider, double tau,
                            std::uint64_t partner_seed) {
    PreparedBatch out;
    std::vector<BinaryMasks> masks;
    const int ctx = backbone.info().context_length;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        MaskedPairBundle bundle;
        try {
            const TokenSequence tokens = backbone.tokenize(s.caption);
            bundle.removed = select_first_noun(tokens, tagger);
            bundle.masked_tokens = mask_text(tokens, bundle.removed);
            if (bundle.masked_tokens.length + 1 > ctx) {
                ++out.skips.query_too_long;
                continue;
            }
            const RelevanceMap map = relevance_map(provider, s.image, bundle.removed.word);
            masks.push_back(split_masks(map, tau));
        } catch (const NoMaskableWord&) {
            ++out.skips.no_maskable_word;
            continue;
        } catch (const InvalidInput&) {
            ++out.skips.no_maskable_word;
            continue;
        } catch (const RelevanceUnavailable&) {
            ++out.skips.relevance_unavailable;
            continue;
        }
        out.kept.push_back(static_cast<int>(i));
        out.bundles.push_back(std::move(bundle));
    }
    const int k = out.size();
    if (k == 0) {
        return out;
    }
    const auto partners = assign_partners(k, partner_seed);
    ImageBatch originals, mixed;
    for (int j = 0; j < k; ++j) {
        const Image& own = samples[out.kept[j]].image;
        const Image& partner = samples[out.kept[partners[j]]].image;
        out.bundles[j].partner_index = out.kept[partners[j]];
        out.bundles[j].masked_image = mix_images(own, partner, masks[j]);
        originals.images.push_back(own);
        mixed.images.push_back(out.bundles[j].masked_image);
    }
    out.originals = backbone.encode_image(originals);
    out.masked = backbone.encode_image(mixed);
    return out;
}

LossBundle batch_loss(const PreparedBatch& batch, const InversionNetwork& net, const Backbone& backbone,
                      double alpha, double temperature, InversionNetwork::Parameters* grads,
                      std::mt19937_64* dropout_rng) {
    const int k = batch.size();
    if (k == 0) {
        throw InvalidInput("empty batch");
    }
    const int dim = backbone.info().feature_dim;

    InversionNetwork::Trace masked_trace, plain_trace;
    const Mat w_masked = net.forward(batch.masked.vectors, &masked_trace, dropout_rng);
    const Mat w_plain = net.forward(batch.originals.vectors, &plain_trace, dropout_rng);

    std::vector<ComposedQuery> composed, prompts;
    FeatureBatch f_composed{Mat(k, dim), true};
    FeatureBatch f_prompt{Mat(k, dim), true};
    for (int j = 0; j < k; ++j) {
        const auto& b = batch.bundles[j];
        composed.push_back(compose_query(backbone, b.masked_tokens, w_masked.row(j).transpose(),
                                         b.removed.token_position));
        f_composed.vectors.row(j) = backbone.encode_rows(composed[j].embedded.embeddings, composed[j].end_position());
        prompts.push_back(build_prompt_query(backbone, w_plain.row(j).transpose()));
        f_prompt.vectors.row(j) = backbone.encode_rows(prompts[j].embedded.embeddings, prompts[j].end_position());
    }

    LossBundle loss;
    if (!grads) {
        loss = total_loss(query_target_loss(batch.originals, f_composed, temperature),
                          original_loss(batch.originals, f_prompt, temperature), alpha);
        return loss;
    }

    const InfoNceGradient qt = symmetric_info_nce_grad(batch.originals, f_composed, temperature);
    const InfoNceGradient org = symmetric_info_nce_grad(batch.originals, f_prompt, temperature);
    loss = total_loss(qt.loss, org.loss, alpha);

    Mat g_masked = Mat::Zero(k, w_masked.cols());
    Mat g_plain = Mat::Zero(k, w_plain.cols());
    for (int j = 0; j < k; ++j) {
        if (alpha != 0.0) {
            const Vec g = alpha * qt.grad_b.row(j).transpose();
            const Mat rows = backbone.encode_rows_backward(composed[j].embedded.embeddings,
                                                           composed[j].end_position(), g);
            g_masked.row(j) = rows.row(composed[j].pseudo_position);
        }
        const Vec g = org.grad_b.row(j).transpose();
        const Mat rows = backbone.encode_rows_backward(prompts[j].embedded.embeddings, prompts[j].end_position(), g);
        g_plain.row(j) = rows.row(prompts[j].pseudo_position);
    }
    net.backward(masked_trace, g_masked, *grads);
    net.backward(plain_trace, g_plain, *grads);
    return loss;
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const Backbone> backbone, std::shared_ptr<const PosTagger> tagger,
                 std::shared_ptr<const RelevanceProvider> provider)
    : config_(std::move(config)), backbone_(std::move(backbone)), tagger_(std::move(tagger)),
      provider_(std::move(provider)) {
    if (config_.batch_size < 1 || config_.epochs < 1) {
        throw ConfigError("train.batch_size and train.epochs must be >= 1");
    }
    const auto& info = backbone_->info();
    const int hidden = config_.hidden_dim > 0 ? config_.hidden_dim : 4 * info.token_dim;
    AdamW::Options opt{config_.weight_decay, config_.beta1, config_.beta2, config_.eps};
    if (!config_.resume.empty()) {
        Checkpoint ck = load_checkpoint(config_.resume, &info);
        if (ck.meta.backbone_fingerprint != backbone_->fingerprint()) {
            throw ConfigError("checkpoint " + config_.resume + " was trained with backbone " +
                              ck.meta.backbone_fingerprint + ", not " + backbone_->fingerprint());
        }
        net_ = std::move(ck.net);
        optimizer_ = ck.optimizer ? std::move(*ck.optimizer) : AdamW(net_.parameters(), opt);
        start_epoch_ = ck.meta.epoch;
        step_ = ck.meta.step;
    } else {
        net_ = InversionNetwork({info.feature_dim, hidden, info.token_dim}, config_.seed, config_.dropout);
        optimizer_ = AdamW(net_.parameters(), opt);
    }
}

double Trainer::temperature() const {
    return config_.temperature > 0.0 ? config_.temperature : 1.0 / backbone_->info().logit_scale;
}

double Trainer::learning_rate(long long step, long long total_steps) const {
    if (config_.lr_schedule == "cosine" && total_steps > 0) {
        const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
        return config_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    return config_.learning_rate;
}

TrainReport Trainer::run(const PairDataset& data, const TrainHooks& hooks) {
    const auto t0 = std::chrono::steady_clock::now();
    auto warn = [&](const std::string& msg) {
        if (hooks.warn) hooks.warn(msg);
    };
    if (config_.checkpoint_dir.empty()) {
        throw ConfigError("train.checkpoint_dir is empty");
    }
    {
        std::error_code ec;
        fs::create_directories(config_.checkpoint_dir, ec);
        const fs::path probe = fs::path(config_.checkpoint_dir) / ".write-probe";
        std::ofstream out(probe);
        if (ec || !out) {
            throw IoError("checkpoint directory " + config_.checkpoint_dir + " is not writable");
        }
        out.close();
        fs::remove(probe, ec);
    }
    if (data.records.empty()) {
        throw DataError("no usable training pairs in " + data.manifest);
    }

    TrainReport report;
    report.dataset_size = data.records.size();
    report.dropped_records = data.drops.size();
    report.backbone_checksum_before = backbone_->weights_checksum();

    const auto& info = backbone_->info();
    const std::size_t n = data.records.size();
    const long long steps_per_epoch = static_cast<long long>((n + config_.batch_size - 1) / config_.batch_size);
    const long long total_steps = steps_per_epoch * config_.epochs;
    const double temp = temperature();
    const std::string fingerprint = backbone_->fingerprint();

    for (int epoch = start_epoch_; epoch < config_.epochs; ++epoch) {
        const auto order = epoch_order(n, config_.seed, epoch);
        SkipCounts epoch_skips;
        double epoch_total = 0.0;
        int epoch_steps = 0;
        for (std::size_t begin = 0; begin < n; begin += config_.batch_size) {
            const std::size_t end = std::min(n, begin + static_cast<std::size_t>(config_.batch_size));
            std::vector<TrainingSample> samples;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& rec = data.records[order[i]];
                try {
                    samples.push_back({load_image(rec.image_path, info), rec.caption});
                } catch (const DataError&) {
                    ++epoch_skips.undecodable;
                } catch (const IoError&) {
                    ++epoch_skips.undecodable;
                }
            }
            const std::uint64_t batch_seed = config_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step_);
            PreparedBatch batch = prepare_batch(samples, *backbone_, *tagger_, *provider_, config_.tau, batch_seed);
            epoch_skips += batch.skips;
            if (batch.size() == 0) {
                ++report.skipped_steps;
                warn("epoch " + std::to_string(epoch + 1) + ": no maskable sample in batch, step skipped");
                continue;
            }
            auto grads = net_.zero_gradients();
            std::mt19937_64 drop_rng(batch_seed ^ 0xD1B54A32D192ED03ULL);
            const LossBundle loss =
                batch_loss(batch, net_, *backbone_, config_.alpha, temp, &grads, config_.dropout > 0 ? &drop_rng : nullptr);
            if (!std::isfinite(loss.total)) {
                throw ContractViolation("non-finite loss at step " + std::to_string(step_ + 1));
            }
            if (config_.grad_clip > 0.0) {
                double sq = 0.0;
                for (const auto& g : grads) sq += g.squaredNorm();
                const double norm = std::sqrt(sq);
                if (norm > config_.grad_clip) {
                    for (auto& g : grads) g *= config_.grad_clip / norm;
                }
            }
            optimizer_.step(net_.parameters(), grads, learning_rate(step_, total_steps));
            ++step_;
            StepRecord rec{step_, epoch + 1, batch.size(), loss};
            report.history.push_back(rec);
            if (hooks.on_step) hooks.on_step(rec);
            epoch_total += loss.total;
            ++epoch_steps;
        }
        report.epoch_skips.push_back(epoch_skips);
        report.epoch_mean_total.push_back(epoch_steps ? epoch_total / epoch_steps : std::nan(""));

        char name[32];
        std::snprintf(name, sizeof(name), "epoch-%03d.safetensors", epoch + 1);
        const CheckpointMeta meta{epoch + 1, step_, info.name, fingerprint, config_.config_hash};
        const std::string path = (fs::path(config_.checkpoint_dir) / name).string();
        save_checkpoint(path, net_, &optimizer_, meta);
        save_checkpoint((fs::path(config_.checkpoint_dir) / "last.safetensors").string(), net_, &optimizer_, meta);
        report.final_checkpoint = path;
    }
    start_epoch_ = config_.epochs;
    report.backbone_checksum_after = backbone_->weights_checksum();
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace cirmask
