#include "cirmask/error.hpp"
#include "cirmask/stub_backbone.hpp"
#include "cirmask/training.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace cirmask;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const StubBackbone> stub() {
    static const auto b = std::make_shared<const StubBackbone>(testing::stub_options());
    return b;
}

const std::vector<std::string> captions = {
    "a dog on the grass",         "two cats on a sofa",        "a red car near a house",
    "a man riding a horse",       "a bird in a tree",          "a boat on the lake",
    "a woman holding an umbrella", "a bowl of fruit on a table", "a child with a kite",
};

std::vector<TrainingSample> samples(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TrainingSample> out;
    for (int i = 0; i < n; ++i) out.push_back({testing::random_image(rng, 8), captions[i % captions.size()]});
    return out;
}

PreparedBatch batch_of(int n, std::uint64_t seed) {
    static const LexiconTagger tagger;
    static const StubRelevanceProvider provider(4, 3);
    const auto s = samples(n, seed);
    return prepare_batch(s, *stub(), tagger, provider, 0.3, seed);
}

struct Fixture {
    PairDataset data;
    std::string dir;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        const auto dir = testing::scratch("train-fixture");
        FixtureOptions o;
        o.pairs = 40;
        o.triplets = 0;
        o.image_size = 16;
        const auto s = write_synthetic_fixture(dir.string(), o);
        return Fixture{load_pairs(s.manifest, 1000), dir.string()};
    }();
    return f;
}

TrainConfig small_config(const std::string& ckdir) {
    TrainConfig c;
    c.batch_size = 8;
    c.epochs = 2;
    c.learning_rate = 1e-3;
    c.seed = 7;
    c.hidden_dim = 32;
    c.checkpoint_dir = ckdir;
    return c;
}

Trainer make_trainer(const TrainConfig& c) {
    return Trainer(c, stub(), std::make_shared<LexiconTagger>(), std::make_shared<StubRelevanceProvider>(4, c.seed));
}

bool same_params(const InversionNetwork& a, const InversionNetwork& b) {
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        if (a.parameters()[i] != b.parameters()[i]) return false;
    }
    return true;
}

} // namespace

TEST_CASE("eight-sample batch gives a finite bundle with total = 0.5 qt + org") {
    const PreparedBatch b = batch_of(8, 1);
    CHECK(b.size() == 8);
    CHECK(b.skips.total() == 0);
    for (int i = 0; i < 8; ++i) CHECK(b.bundles[i].partner_index != i);
    const InversionNetwork net({16, 64, 16}, 3);
    const LossBundle l = batch_loss(b, net, *stub(), 0.5, 1.0 / stub()->info().logit_scale);
    CHECK(std::isfinite(l.total));
    CHECK(l.qt > 0.0);
    CHECK(l.org > 0.0);
    CHECK(std::abs(l.total - (0.5 * l.qt + l.org)) <= 1e-12);
    CHECK(l.qt == doctest::Approx(0.5 * (l.qt_i2t + l.qt_t2i)).epsilon(1e-14));
    CHECK(l.org == doctest::Approx(0.5 * (l.org_i2t + l.org_t2i)).epsilon(1e-14));
}

TEST_CASE("alpha zero keeps qt but the total is org") {
    const PreparedBatch b = batch_of(8, 2);
    const InversionNetwork net({16, 64, 16}, 3);
    const LossBundle l = batch_loss(b, net, *stub(), 0.0, 0.07);
    CHECK(l.qt > 0.0);
    CHECK(l.total == l.org);
}

TEST_CASE("unmaskable samples shrink the batch") {
    static const LexiconTagger tagger;
    static const StubRelevanceProvider provider(4, 3);
    auto s = samples(4, 5);
    s[1].caption = "is very big";
    s[3].caption = "and then";
    const PreparedBatch b = prepare_batch(s, *stub(), tagger, provider, 0.3, 1);
    CHECK(b.size() == 2);
    CHECK(b.kept == std::vector<int>{0, 2});
    CHECK(b.skips.no_maskable_word == 2);
    CHECK(b.originals.size() == 2);

    s[0].caption = "very";
    s[2].caption = "is";
    CHECK(prepare_batch(s, *stub(), tagger, provider, 0.3, 1).size() == 0);
}

TEST_CASE("analytic gradient of the total matches central differences") {
    const PreparedBatch b = batch_of(4, 9);
    REQUIRE(b.size() == 4);
    InversionNetwork net({16, 32, 16}, 5);
    const double temp = 1.0 / stub()->info().logit_scale;
    auto grads = net.zero_gradients();
    batch_loss(b, net, *stub(), 0.5, temp, &grads);
    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        Mat& p = net.parameters()[k];
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double keep = p.data()[i];
            p.data()[i] = keep + h;
            const double up = batch_loss(b, net, *stub(), 0.5, temp).total;
            p.data()[i] = keep - h;
            const double down = batch_loss(b, net, *stub(), 0.5, temp).total;
            p.data()[i] = keep;
            worst = std::max(worst, testing::rel_error(grads[k].data()[i], (up - down) / (2 * h)));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("AdamW first step against a hand computation") {
    InversionNetwork::Parameters p{Mat::Constant(1, 1, 1.0)};
    InversionNetwork::Parameters g{Mat::Constant(1, 1, 0.5)};
    AdamW opt(p, {0.01, 0.9, 0.999, 1e-8});
    opt.step(p, g, 0.1);
    // decay then m̂/(√v̂+eps) = 0.5/(0.5+1e-8)
    CHECK(p[0](0, 0) == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
    CHECK(opt.steps() == 1);
    CHECK(opt.first_moment()[0](0, 0) == doctest::Approx(0.05));
    CHECK(opt.second_moment()[0](0, 0) == doctest::Approx(0.001 * 0.25));
}

TEST_CASE("checkpoint round-trip is bitwise") {
    const auto dir = testing::scratch("ckpt");
    InversionNetwork net({16, 32, 16}, 4);
    AdamW opt(net.parameters(), {});
    auto grads = net.zero_gradients();
    for (auto& g : grads) g.setConstant(0.1);
    opt.step(net.parameters(), grads, 1e-3);
    const std::string path = (dir / "c.safetensors").string();
    save_checkpoint(path, net, &opt, {3, 17, "stub", "stub:abc", "hash"});
    const Checkpoint ck = load_checkpoint(path, &stub()->info());
    CHECK(same_params(ck.net, net));
    REQUIRE(ck.optimizer.has_value());
    CHECK(ck.optimizer->steps() == 1);
    CHECK(ck.optimizer->options().eps == 1e-8);
    CHECK(ck.optimizer->options().weight_decay == 0.01);
    CHECK(ck.optimizer->options().beta2 == 0.999);
    CHECK(ck.optimizer->first_moment()[2] == opt.first_moment()[2]);
    CHECK(ck.optimizer->second_moment()[5] == opt.second_moment()[5]);
    CHECK(ck.meta.epoch == 3);
    CHECK(ck.meta.step == 17);
    CHECK(ck.meta.backbone_fingerprint == "stub:abc");

    BackboneInfo wide = stub()->info();
    wide.token_dim = 32;
    CHECK_THROWS_AS(load_checkpoint(path, &wide), ConfigError);
    CHECK_THROWS_AS(load_checkpoint((dir / "none.safetensors").string()), ConfigError);
}

TEST_CASE("identical runs give identical trajectories and parameters") {
    Trainer a = make_trainer(small_config(testing::scratch("det-a").string()));
    Trainer b = make_trainer(small_config(testing::scratch("det-b").string()));
    const TrainReport ra = a.run(fixture().data);
    const TrainReport rb = b.run(fixture().data);
    REQUIRE(ra.history.size() == rb.history.size());
    CHECK(ra.history.size() == 10);
    for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].loss.total == rb.history[i].loss.total);
    CHECK(same_params(a.network(), b.network()));
    for (const auto& r : ra.history) CHECK(std::abs(r.loss.total - (0.5 * r.loss.qt + r.loss.org)) <= 1e-6);

    const InversionNetwork init({16, 32, 16}, 7);
    CHECK_FALSE(same_params(init, a.network()));
    CHECK(ra.backbone_checksum_before == ra.backbone_checksum_after);
    CHECK(fs::exists(fs::path(small_config(testing::scratch("det-c").string()).checkpoint_dir)));
}

TEST_CASE("resume restores the step counter and optimizer state") {
    const auto full_dir = testing::scratch("resume-full");
    Trainer full = make_trainer(small_config(full_dir.string()));
    full.run(fixture().data);

    const Checkpoint first = load_checkpoint((full_dir / "epoch-001.safetensors").string());
    CHECK(first.meta.epoch == 1);
    CHECK(first.meta.step == 5);
    REQUIRE(first.optimizer.has_value());
    CHECK(first.optimizer->steps() == 5);

    TrainConfig c = small_config(testing::scratch("resume-rest").string());
    c.resume = (full_dir / "epoch-001.safetensors").string();
    Trainer rest = make_trainer(c);
    const TrainReport r = rest.run(fixture().data);
    REQUIRE(r.history.size() == 5);
    CHECK(r.history.front().step == 6);
    CHECK(r.history.front().epoch == 2);
    CHECK(same_params(rest.network(), full.network()));
}

TEST_CASE("resume against a different backbone is refused") {
    const auto dir = testing::scratch("resume-other");
    Trainer t = make_trainer(small_config(dir.string()));
    TrainConfig c = small_config(dir.string());
    c.epochs = 1;
    make_trainer(c).run(fixture().data);

    BackboneOptions o = testing::stub_options();
    o.stub_seed = 99;
    TrainConfig r = small_config(testing::scratch("resume-other-2").string());
    r.resume = (dir / "last.safetensors").string();
    CHECK_THROWS_AS(Trainer(r, std::make_shared<StubBackbone>(o), std::make_shared<LexiconTagger>(),
                            std::make_shared<StubRelevanceProvider>(4, 7)),
                    ConfigError);
}

TEST_CASE("unwritable checkpoint directory fails before the first step") {
    const auto dir = testing::scratch("unwritable");
    std::ofstream(dir / "plain-file") << "x";
    Trainer t = make_trainer(small_config((dir / "plain-file" / "ck").string()));
    int steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord&) { ++steps; };
    CHECK_THROWS_AS(t.run(fixture().data, hooks), IoError);
    CHECK(steps == 0);
}

TEST_CASE("invalid trainer configuration") {
    TrainConfig c = small_config("x");
    c.batch_size = 0;
    CHECK_THROWS_AS(make_trainer(c), ConfigError);
}
