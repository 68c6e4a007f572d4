#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dmaflow/errors.hpp"
#include "dmaflow/nnet.hpp"
#include "dmaflow/rng.hpp"
#include "dmaflow/series.hpp"

using namespace dmaflow;
using namespace dmaflow::nnet;

namespace {

NetConfig tiny_config(int channels, CellType cell, std::uint64_t seed) {
    NetConfig cfg;
    cfg.input_channels = channels;
    cfg.window = 6;
    cfg.conv_filters = 3;
    cfg.conv_kernel = 3;
    cfg.cell = cell;
    cfg.hidden = 4;
    cfg.dense_hidden = 4;
    cfg.dropout_rate = 0.0;
    cfg.l2_lambda = 1e-3;
    cfg.seed = seed;
    return cfg;
}

std::vector<double*> param_pointers(ModelParams& p) {
    std::vector<double*> out;
    for (Vec* v : {&p.conv_w.data, &p.conv_b, &p.rec_wx.data, &p.rec_wh.data, &p.rec_b,
                   &p.dense_w.data, &p.dense_b, &p.out_w, &p.out_b})
        for (double& x : *v) out.push_back(&x);
    return out;
}

// Loss with the same convention backward differentiates: squared error plus
// L2 on the weight tensors (biases excluded).
double loss_at(const NetConfig& cfg, const ModelParams& p, const Mat& window, double target) {
    const double pred = forward(cfg, p, window, false, nullptr, nullptr);
    double l2 = 0.0;
    for (const Vec* v : {&p.conv_w.data, &p.rec_wx.data, &p.rec_wh.data, &p.dense_w.data, &p.out_w})
        for (double x : *v) l2 += x * x;
    const double err = pred - target;
    return err * err + cfg.l2_lambda * l2;
}

// Central finite differences against the analytic gradient; returns the worst
// relative error observed.
double gradient_check(const NetConfig& cfg, std::uint64_t data_seed) {
    ModelParams params = init(cfg);
    Rng rng(data_seed);
    Mat window(static_cast<std::size_t>(cfg.input_channels), static_cast<std::size_t>(cfg.window));
    for (double& v : window.data) v = rng.uniform(-1.0, 1.0);
    const double target = rng.uniform(-1.0, 1.0);

    Cache cache;
    forward(cfg, params, window, false, nullptr, &cache);
    Gradients analytic = backward(cfg, params, cache, target);

    const double h = 1e-5;
    auto ptrs = param_pointers(params);
    auto aptrs = param_pointers(analytic);
    double worst = 0.0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const double saved = *ptrs[i];
        *ptrs[i] = saved + h;
        const double up = loss_at(cfg, params, window, target);
        *ptrs[i] = saved - h;
        const double down = loss_at(cfg, params, window, target);
        *ptrs[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = *aptrs[i];
        if (std::abs(a) < 1e-7 && std::abs(numeric) < 1e-7) continue;
        worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric)));
    }
    return worst;
}

WindowedDataset constant_dataset(double value, std::size_t n_samples, int window) {
    WindowedDataset ds;
    ds.mode = DatasetMode::kLocal;
    for (std::size_t i = 0; i < n_samples; ++i) {
        FeatureWindow fw;
        fw.values = Mat(1, static_cast<std::size_t>(window), value);
        fw.t_index = static_cast<std::int64_t>(window) - 1 + static_cast<std::int64_t>(i);
        ds.inputs.push_back(std::move(fw));
        ds.targets.push_back(value);
    }
    return ds;
}

}  // namespace

TEST_SUITE_BEGIN("nnet");

TEST_CASE("gradient check: analytic vs central differences") {
    for (const CellType cell : {CellType::kLstm, CellType::kGru}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const NetConfig cfg = tiny_config(2, cell, seed);
            const double worst = gradient_check(cfg, 1000 + seed);
            INFO("cell ", to_string(cell), " seed ", seed, " worst rel err ", worst);
            CHECK(worst < 1e-4);
        }
    }
}

TEST_CASE("zero loss means zero gradients when l2 is off") {
    NetConfig cfg = tiny_config(1, CellType::kLstm, 5);
    cfg.l2_lambda = 0.0;
    ModelParams params = init(cfg);
    Rng rng(77);
    Mat window(1, 6);
    for (double& v : window.data) v = rng.uniform(-1.0, 1.0);
    Cache cache;
    const double pred = forward(cfg, params, window, false, nullptr, &cache);
    Gradients g = backward(cfg, params, cache, pred);  // target == prediction
    CHECK(squared_norm(g) == 0.0);
}

TEST_CASE("with a perfect prediction the gradient is purely the l2 term") {
    NetConfig cfg = tiny_config(1, CellType::kGru, 8);
    cfg.l2_lambda = 0.5;
    ModelParams params = init(cfg);
    Mat window(1, 6, 0.25);
    Cache cache;
    const double pred = forward(cfg, params, window, false, nullptr, &cache);
    Gradients g = backward(cfg, params, cache, pred);
    for (std::size_t i = 0; i < g.dense_w.data.size(); ++i)
        CHECK(g.dense_w.data[i] == doctest::Approx(2.0 * 0.5 * params.dense_w.data[i]));
    for (double b : g.dense_b) CHECK(b == 0.0);
    for (double b : g.conv_b) CHECK(b == 0.0);
}

TEST_CASE("init: deterministic, zero biases, bounded weights") {
    const NetConfig cfg = tiny_config(3, CellType::kLstm, 42);
    const ModelParams a = init(cfg);
    const ModelParams b = init(cfg);
    CHECK(a == b);

    for (double v : a.conv_b) CHECK(v == 0.0);
    for (double v : a.rec_b) CHECK(v == 0.0);
    for (double v : a.dense_b) CHECK(v == 0.0);
    CHECK(a.out_b[0] == 0.0);

    const double conv_bound = std::sqrt(6.0 / (3.0 * 3 + 3.0 * 3));
    for (double v : a.conv_w.data) CHECK(std::abs(v) <= conv_bound);
    const double wx_bound = std::sqrt(6.0 / (3.0 + 4.0));
    for (double v : a.rec_wx.data) CHECK(std::abs(v) <= wx_bound);
    const double wh_bound = std::sqrt(6.0 / (4.0 + 4.0));
    for (double v : a.rec_wh.data) CHECK(std::abs(v) <= wh_bound);

    const NetConfig other = tiny_config(3, CellType::kLstm, 43);
    CHECK(!(init(other) == a));
}

TEST_CASE("forward basics") {
    NetConfig cfg = tiny_config(2, CellType::kLstm, 1);
    ModelParams zeros = init(cfg);
    zero(zeros);
    Mat window(2, 6, 3.0);
    CHECK(forward(cfg, zeros, window, false, nullptr, nullptr) == 0.0);

    ModelParams params = init(cfg);
    const double p1 = forward(cfg, params, window, false, nullptr, nullptr);
    const double p2 = forward(cfg, params, window, false, nullptr, nullptr);
    CHECK(p1 == p2);

    // dropout_rate 0: training pass equals inference pass exactly
    Rng rng(3);
    CHECK(forward(cfg, params, window, true, &rng, nullptr) == p1);

    Mat bad(3, 6, 1.0);
    CHECK_THROWS_AS((void)forward(cfg, params, bad, false, nullptr, nullptr), ShapeMismatch);
}

TEST_CASE("inverted dropout preserves the expectation") {
    Rng rng(1234);
    Vec base(32);
    for (double& v : base) v = rng.uniform(0.5, 2.0);

    Vec sum(base.size(), 0.0);
    const int reps = 20000;
    Vec mask;
    for (int r = 0; r < reps; ++r) {
        Vec v = base;
        apply_dropout(v, 0.2, rng, mask);
        for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
    }
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double avg = sum[i] / reps;
        CHECK(std::abs(avg - base[i]) / base[i] < 0.02);
    }
}

TEST_CASE("training-mode dropout is stochastic but seeded") {
    NetConfig cfg = tiny_config(1, CellType::kGru, 11);
    cfg.dropout_rate = 0.5;
    ModelParams params = init(cfg);
    Mat window(1, 6, 1.0);
    Rng r1(9), r2(9), r3(10);
    const double a = forward(cfg, params, window, true, &r1, nullptr);
    const double b = forward(cfg, params, window, true, &r2, nullptr);
    const double c = forward(cfg, params, window, true, &r3, nullptr);
    CHECK(a == b);
    CHECK(a != c);  // different mask stream
}

TEST_CASE("sgd_step arithmetic") {
    NetConfig cfg = tiny_config(1, CellType::kLstm, 2);
    ModelParams params = init(cfg);

    Gradients zero_g = params;
    zero(zero_g);
    ModelParams before = params;
    sgd_step(params, zero_g, 0.5);
    CHECK(params == before);  // bitwise

    params.out_b[0] = 1.0;
    Gradients g = zero_g;
    g.out_b[0] = 0.5;
    sgd_step(params, g, 0.1);
    CHECK(params.out_b[0] == doctest::Approx(0.95).epsilon(1e-15));

    // pure L2 pull: w = 1, lambda = 0.5 -> grad = 2*lambda*w = 1, so w -> 0.9
    params.out_w[0] = 1.0;
    g = zero_g;
    g.out_w[0] = 2.0 * 0.5 * params.out_w[0];
    sgd_step(params, g, 0.1);
    CHECK(params.out_w[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("train fits a constant series") {
    NetConfig cfg;
    cfg.input_channels = 1;
    cfg.window = 8;
    cfg.conv_filters = 4;
    cfg.conv_kernel = 3;
    cfg.hidden = 6;
    cfg.dense_hidden = 4;
    cfg.dropout_rate = 0.0;
    cfg.learning_rate = 0.05;
    cfg.epochs = 50;
    cfg.patience = 50;
    cfg.seed = 3;

    const double c = 5.0;
    const auto train_set = constant_dataset(c, 192, cfg.window);
    const auto val_set = constant_dataset(c, 48, cfg.window);
    const TrainReport report = train(cfg, train_set, val_set);

    FeatureWindow fw{Mat(1, 8, c), 7};
    const double pred = predict(cfg, report.params, fw);
    CHECK(std::abs(pred - c) / c < 0.01);
    CHECK(report.best_epoch <= cfg.epochs);
    for (double l : report.train_loss) {
        CHECK(l >= 0.0);
        CHECK(std::isfinite(l));
    }
}

TEST_CASE("train is deterministic per seed") {
    Rng rng(55);
    WindowedDataset train_set, val_set;
    train_set.mode = val_set.mode = DatasetMode::kLocal;
    Vec series(120);
    double prev = 0.5;
    for (double& v : series) {
        prev = 0.8 * prev + 0.2 * rng.uniform01();
        v = prev;
    }
    const int W = 6;
    for (std::size_t t = W - 1; t + 1 < series.size(); ++t) {
        FeatureWindow fw;
        fw.values = Mat(1, W);
        for (int i = 0; i < W; ++i) fw.values(0, i) = series[t - W + 1 + i];
        fw.t_index = static_cast<std::int64_t>(t);
        auto& ds = t < 90 ? train_set : val_set;
        ds.inputs.push_back(std::move(fw));
        ds.targets.push_back(series[t + 1]);
    }

    NetConfig cfg = tiny_config(1, CellType::kLstm, 17);
    cfg.window = W;
    cfg.dropout_rate = 0.2;
    cfg.epochs = 4;

    const TrainReport a = train(cfg, train_set, val_set);
    const TrainReport b = train(cfg, train_set, val_set);
    CHECK(a.train_loss == b.train_loss);
    CHECK(a.val_loss == b.val_loss);
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.params == b.params);

    cfg.seed = 18;
    const TrainReport c = train(cfg, train_set, val_set);
    CHECK(a.train_loss != c.train_loss);
}

TEST_CASE("batch gradients: serial and parallel paths agree bitwise") {
    NetConfig cfg = tiny_config(2, CellType::kLstm, 23);
    cfg.dropout_rate = 0.3;  // exercise mask seeding under threading
    ModelParams params = init(cfg);

    WindowedDataset ds;
    ds.mode = DatasetMode::kLocal;
    Rng rng(9);
    for (int i = 0; i < 40; ++i) {
        FeatureWindow fw;
        fw.values = Mat(2, 6);
        for (double& v : fw.values.data) v = rng.uniform(-1.0, 1.0);
        fw.t_index = 5 + i;
        ds.inputs.push_back(std::move(fw));
        ds.targets.push_back(rng.uniform(-1.0, 1.0));
    }
    std::vector<std::size_t> batch(ds.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;

    const Gradients p = batch_gradients(cfg, params, ds, batch, 1);
    const Gradients s = batch_gradients_serial(cfg, params, ds, batch, 1);
    CHECK(p == s);

    CHECK(dataset_mse(cfg, params, ds) == dataset_mse_serial(cfg, params, ds));
}

TEST_CASE("divergence is detected and reported") {
    NetConfig cfg = tiny_config(1, CellType::kLstm, 4);
    cfg.learning_rate = 1e200;
    cfg.epochs = 3;
    const auto train_set = constant_dataset(2.0, 64, cfg.window);
    const auto val_set = constant_dataset(2.0, 16, cfg.window);
    CHECK_THROWS_AS((void)train(cfg, train_set, val_set), DivergenceDetected);
}

TEST_CASE("train input validation") {
    NetConfig cfg = tiny_config(1, CellType::kLstm, 4);
    WindowedDataset empty;
    const auto ok = constant_dataset(1.0, 10, cfg.window);
    CHECK_THROWS_AS((void)train(cfg, empty, ok), EmptyDataset);
    CHECK_THROWS_AS((void)train(cfg, ok, empty), EmptyDataset);

    auto wrong = constant_dataset(1.0, 10, cfg.window + 1);
    CHECK_THROWS_AS((void)train(cfg, wrong, ok), ShapeMismatch);
}

TEST_CASE("predict is pure") {
    NetConfig cfg = tiny_config(1, CellType::kGru, 6);
    const ModelParams params = init(cfg);
    const ModelParams snapshot = params;
    FeatureWindow fw{Mat(1, 6, 0.7), 5};
    const double a = predict(cfg, params, fw);
    const double b = predict(cfg, params, fw);
    CHECK(a == b);
    CHECK(params == snapshot);
}

TEST_CASE("model params round-trip through the JSON artifact bit-exactly") {
    NetConfig cfg = tiny_config(2, CellType::kLstm, 31);
    const ModelParams params = init(cfg);
    const std::string path = "test_model_roundtrip.json";
    save_params(cfg, params, path);
    const auto [cfg2, params2] = load_params(path);
    CHECK(params2 == params);  // bitwise through the decimal round-trip
    CHECK(cfg2.input_channels == cfg.input_channels);
    CHECK(cfg2.cell == cfg.cell);
    CHECK(cfg2.seed == cfg.seed);
    std::remove(path.c_str());
}

TEST_SUITE_END();
