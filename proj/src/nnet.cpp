#include "dmaflow/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dmaflow/errors.hpp"
#include "dmaflow/parallel.hpp"

namespace dmaflow::nnet {

namespace {

constexpr double kClipNorm = 5.0;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double relu(double x) { return x > 0.0 ? x : 0.0; }

std::uint64_t mask_seed(std::uint64_t seed, int epoch, std::size_t index) {
    return mix64(mix64(mix64(seed, 2), static_cast<std::uint64_t>(epoch)),
                 static_cast<std::uint64_t>(index));
}

ModelParams make_like(const NetConfig& cfg) {
    const std::size_t k = static_cast<std::size_t>(cfg.input_channels);
    const std::size_t kern = static_cast<std::size_t>(cfg.conv_kernel);
    const std::size_t filters = static_cast<std::size_t>(cfg.conv_filters);
    const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
    const std::size_t gates = static_cast<std::size_t>(cfg.gates());
    const std::size_t dense = static_cast<std::size_t>(cfg.dense_hidden);

    ModelParams p;
    p.conv_w = Mat(filters, k * kern);
    p.conv_b = Vec(filters, 0.0);
    p.rec_wx = Mat(gates * hidden, filters);
    p.rec_wh = Mat(gates * hidden, hidden);
    p.rec_b = Vec(gates * hidden, 0.0);
    p.dense_w = Mat(dense, hidden);
    p.dense_b = Vec(dense, 0.0);
    p.out_w = Vec(dense, 0.0);
    p.out_b = Vec(1, 0.0);
    return p;
}

template <class F>
void for_each_tensor(ModelParams& p, F&& f) {
    f(p.conv_w.data);
    f(p.conv_b);
    f(p.rec_wx.data);
    f(p.rec_wh.data);
    f(p.rec_b);
    f(p.dense_w.data);
    f(p.dense_b);
    f(p.out_w);
    f(p.out_b);
}

template <class F>
void for_each_tensor(const ModelParams& p, F&& f) {
    f(p.conv_w.data);
    f(p.conv_b);
    f(p.rec_wx.data);
    f(p.rec_wh.data);
    f(p.rec_b);
    f(p.dense_w.data);
    f(p.dense_b);
    f(p.out_w);
    f(p.out_b);
}

void fill_glorot(Mat& m, double fan_in, double fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : m.data) w = rng.uniform(-bound, bound);
}

void check_window_shape(const NetConfig& cfg, const Mat& window) {
    if (window.rows != static_cast<std::size_t>(cfg.input_channels) ||
        window.cols != static_cast<std::size_t>(cfg.window))
        throw ShapeMismatch("window is " + std::to_string(window.rows) + "x" +
                            std::to_string(window.cols) + ", expected " +
                            std::to_string(cfg.input_channels) + "x" +
                            std::to_string(cfg.window));
}

void check_dataset_shape(const NetConfig& cfg, const WindowedDataset& data, const char* name) {
    if (data.size() == 0) throw EmptyDataset(std::string(name) + " dataset is empty");
    for (const auto& fw : data.inputs) check_window_shape(cfg, fw.values);
}

}  // namespace

std::string to_string(CellType c) { return c == CellType::kLstm ? "lstm" : "gru"; }

CellType parse_cell_type(const std::string& s) {
    if (s == "lstm") return CellType::kLstm;
    if (s == "gru") return CellType::kGru;
    throw InvalidConfig("unknown recurrent cell: " + s + " (expected lstm or gru)");
}

void NetConfig::validate() const {
    if (input_channels < 1) throw InvalidConfig("input_channels must be >= 1");
    if (window < 1) throw InvalidConfig("window must be >= 1");
    if (conv_kernel < 1 || conv_kernel > window)
        throw InvalidConfig("conv_kernel must lie in [1, window]");
    if (conv_filters < 1 || hidden < 1 || dense_hidden < 1)
        throw InvalidConfig("layer sizes must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw InvalidConfig("dropout_rate must lie in [0, 1)");
    if (l2_lambda < 0.0) throw InvalidConfig("l2_lambda must be >= 0");
    if (learning_rate <= 0.0) throw InvalidConfig("learning_rate must be positive");
    if (epochs < 1 || batch_size < 1 || patience < 1)
        throw InvalidConfig("epochs, batch_size and patience must be >= 1");
}

ModelParams init(const NetConfig& config) {
    config.validate();
    ModelParams p = make_like(config);
    Rng rng(mix64(config.seed, 0));
    const double k = config.input_channels, kern = config.conv_kernel;
    const double filters = config.conv_filters, hidden = config.hidden;
    const double dense = config.dense_hidden;
    fill_glorot(p.conv_w, k * kern, filters * kern, rng);
    fill_glorot(p.rec_wx, filters, hidden, rng);
    fill_glorot(p.rec_wh, hidden, hidden, rng);
    fill_glorot(p.dense_w, hidden, dense, rng);
    {
        const double bound = std::sqrt(6.0 / (dense + 1.0));
        for (double& w : p.out_w) w = rng.uniform(-bound, bound);
    }
    return p;
}

void apply_dropout(std::span<double> values, double rate, Rng& rng, Vec& mask_out) {
    mask_out.assign(values.size(), 1.0);
    if (rate <= 0.0) return;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double m = rng.uniform01() < rate ? 0.0 : keep_scale;
        mask_out[i] = m;
        values[i] *= m;
    }
}

double forward(const NetConfig& config, const ModelParams& params, const Mat& window,
               bool training, Rng* rng, Cache* cache) {
    check_window_shape(config, window);
    const std::size_t k = static_cast<std::size_t>(config.input_channels);
    const std::size_t kern = static_cast<std::size_t>(config.conv_kernel);
    const std::size_t filters = static_cast<std::size_t>(config.conv_filters);
    const std::size_t steps = static_cast<std::size_t>(config.conv_steps());
    const std::size_t hidden = static_cast<std::size_t>(config.hidden);
    const std::size_t dense = static_cast<std::size_t>(config.dense_hidden);
    const bool drop = training && config.dropout_rate > 0.0;
    if (drop && rng == nullptr)
        throw InvalidConfig("training forward with dropout needs an rng");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.training = training;
    c.input = window;

    // 1-D convolution over time, zones as channels, then ReLU.
    c.conv_pre = Mat(filters, steps);
    for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t j = 0; j < steps; ++j) {
            double acc = params.conv_b[f];
            for (std::size_t ch = 0; ch < k; ++ch)
                for (std::size_t u = 0; u < kern; ++u)
                    acc += params.conv_w(f, ch * kern + u) * window(ch, j + u);
            c.conv_pre(f, j) = acc;
        }
    }
    c.conv_act = c.conv_pre;
    for (double& v : c.conv_act.data) v = relu(v);
    if (drop) {
        apply_dropout(c.conv_act.data, config.dropout_rate, *rng, c.mask_conv);
    } else {
        c.mask_conv.clear();
    }

    // Recurrent layer unrolled over the conv output sequence.
    c.hidden = Mat(steps, hidden);
    Vec h_prev(hidden, 0.0);
    if (config.cell == CellType::kLstm) {
        c.gate_i = Mat(steps, hidden);
        c.gate_f = Mat(steps, hidden);
        c.gate_g = Mat(steps, hidden);
        c.gate_o = Mat(steps, hidden);
        c.cell_state = Mat(steps, hidden);
        Vec c_prev(hidden, 0.0);
        Vec pre(4 * hidden);
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t row = 0; row < 4 * hidden; ++row) {
                double acc = params.rec_b[row];
                for (std::size_t f = 0; f < filters; ++f)
                    acc += params.rec_wx(row, f) * c.conv_act(f, t);
                for (std::size_t h = 0; h < hidden; ++h)
                    acc += params.rec_wh(row, h) * h_prev[h];
                pre[row] = acc;
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                const double ig = sigmoid(pre[h]);
                const double fg = sigmoid(pre[hidden + h]);
                const double gg = std::tanh(pre[2 * hidden + h]);
                const double og = sigmoid(pre[3 * hidden + h]);
                const double cs = fg * c_prev[h] + ig * gg;
                c.gate_i(t, h) = ig;
                c.gate_f(t, h) = fg;
                c.gate_g(t, h) = gg;
                c.gate_o(t, h) = og;
                c.cell_state(t, h) = cs;
                c.hidden(t, h) = og * std::tanh(cs);
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                c_prev[h] = c.cell_state(t, h);
                h_prev[h] = c.hidden(t, h);
            }
        }
    } else {
        c.gate_z = Mat(steps, hidden);
        c.gate_r = Mat(steps, hidden);
        c.gate_n = Mat(steps, hidden);
        c.gru_q = Mat(steps, hidden);
        Vec pre(2 * hidden);
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t row = 0; row < 2 * hidden; ++row) {
                double acc = params.rec_b[row];
                for (std::size_t f = 0; f < filters; ++f)
                    acc += params.rec_wx(row, f) * c.conv_act(f, t);
                for (std::size_t h = 0; h < hidden; ++h)
                    acc += params.rec_wh(row, h) * h_prev[h];
                pre[row] = acc;
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                c.gate_z(t, h) = sigmoid(pre[h]);
                c.gate_r(t, h) = sigmoid(pre[hidden + h]);
                c.gru_q(t, h) = c.gate_r(t, h) * h_prev[h];
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                const std::size_t row = 2 * hidden + h;
                double acc = params.rec_b[row];
                for (std::size_t f = 0; f < filters; ++f)
                    acc += params.rec_wx(row, f) * c.conv_act(f, t);
                for (std::size_t hh = 0; hh < hidden; ++hh)
                    acc += params.rec_wh(row, hh) * c.gru_q(t, hh);
                c.gate_n(t, h) = std::tanh(acc);
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                const double z = c.gate_z(t, h);
                c.hidden(t, h) = (1.0 - z) * c.gate_n(t, h) + z * h_prev[h];
            }
            for (std::size_t h = 0; h < hidden; ++h) h_prev[h] = c.hidden(t, h);
        }
    }

    c.hidden_dropped.assign(h_prev.begin(), h_prev.end());
    if (drop) {
        apply_dropout(c.hidden_dropped, config.dropout_rate, *rng, c.mask_hidden);
    } else {
        c.mask_hidden.clear();
    }

    c.dense_pre.resize(dense);
    c.dense_act.resize(dense);
    for (std::size_t d = 0; d < dense; ++d) {
        double acc = params.dense_b[d];
        for (std::size_t h = 0; h < hidden; ++h)
            acc += params.dense_w(d, h) * c.hidden_dropped[h];
        c.dense_pre[d] = acc;
        c.dense_act[d] = relu(acc);
    }

    double pred = params.out_b[0];
    for (std::size_t d = 0; d < dense; ++d) pred += params.out_w[d] * c.dense_act[d];
    c.prediction = pred;
    return pred;
}

Gradients backward(const NetConfig& config, const ModelParams& params, const Cache& cache,
                   double target) {
    const std::size_t k = static_cast<std::size_t>(config.input_channels);
    const std::size_t kern = static_cast<std::size_t>(config.conv_kernel);
    const std::size_t filters = static_cast<std::size_t>(config.conv_filters);
    const std::size_t steps = static_cast<std::size_t>(config.conv_steps());
    const std::size_t hidden = static_cast<std::size_t>(config.hidden);
    const std::size_t dense = static_cast<std::size_t>(config.dense_hidden);
    const double lambda = config.l2_lambda;

    Gradients g = make_like(config);

    const double dpred = 2.0 * (cache.prediction - target);

    // Output and dense head.
    Vec dpre_dense(dense);
    g.out_b[0] = dpred;
    for (std::size_t d = 0; d < dense; ++d) {
        g.out_w[d] = dpred * cache.dense_act[d];
        const double du = dpred * params.out_w[d];
        dpre_dense[d] = cache.dense_pre[d] > 0.0 ? du : 0.0;
    }
    Vec dhd(hidden, 0.0);
    for (std::size_t d = 0; d < dense; ++d) {
        g.dense_b[d] = dpre_dense[d];
        for (std::size_t h = 0; h < hidden; ++h) {
            g.dense_w(d, h) = dpre_dense[d] * cache.hidden_dropped[h];
            dhd[h] += params.dense_w(d, h) * dpre_dense[d];
        }
    }

    Vec dh(hidden);
    for (std::size_t h = 0; h < hidden; ++h)
        dh[h] = cache.mask_hidden.empty() ? dhd[h] : dhd[h] * cache.mask_hidden[h];

    // Backpropagation through time, filling the conv activation gradient.
    Mat dconv_act(filters, steps, 0.0);
    if (config.cell == CellType::kLstm) {
        Vec dc(hidden, 0.0);
        Vec di(hidden), df(hidden), dg_(hidden), dout(hidden), dh_prev(hidden);
        for (std::size_t tt = steps; tt-- > 0;) {
            for (std::size_t h = 0; h < hidden; ++h) {
                const double ig = cache.gate_i(tt, h);
                const double fg = cache.gate_f(tt, h);
                const double gg = cache.gate_g(tt, h);
                const double og = cache.gate_o(tt, h);
                const double tc = std::tanh(cache.cell_state(tt, h));
                const double c_prev = tt > 0 ? cache.cell_state(tt - 1, h) : 0.0;
                dout[h] = dh[h] * tc * og * (1.0 - og);
                const double dcs = dc[h] + dh[h] * og * (1.0 - tc * tc);
                di[h] = dcs * gg * ig * (1.0 - ig);
                df[h] = dcs * c_prev * fg * (1.0 - fg);
                dg_[h] = dcs * ig * (1.0 - gg * gg);
                dc[h] = dcs * fg;
            }
            std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
            const Vec* gate_grads[4] = {&di, &df, &dg_, &dout};
            for (std::size_t gate = 0; gate < 4; ++gate) {
                const Vec& dg_pre = *gate_grads[gate];
                for (std::size_t h = 0; h < hidden; ++h) {
                    const std::size_t row = gate * hidden + h;
                    const double dgp = dg_pre[h];
                    g.rec_b[row] += dgp;
                    for (std::size_t f = 0; f < filters; ++f) {
                        g.rec_wx(row, f) += dgp * cache.conv_act(f, tt);
                        dconv_act(f, tt) += params.rec_wx(row, f) * dgp;
                    }
                    for (std::size_t hh = 0; hh < hidden; ++hh) {
                        const double h_prev = tt > 0 ? cache.hidden(tt - 1, hh) : 0.0;
                        g.rec_wh(row, hh) += dgp * h_prev;
                        dh_prev[hh] += params.rec_wh(row, hh) * dgp;
                    }
                }
            }
            dh = dh_prev;
        }
    } else {
        Vec dz(hidden), dr(hidden), dn(hidden), dq(hidden), dh_prev(hidden);
        for (std::size_t tt = steps; tt-- > 0;) {
            for (std::size_t h = 0; h < hidden; ++h) {
                const double z = cache.gate_z(tt, h);
                const double n = cache.gate_n(tt, h);
                const double h_prev = tt > 0 ? cache.hidden(tt - 1, h) : 0.0;
                dz[h] = dh[h] * (h_prev - n) * z * (1.0 - z);
                dn[h] = dh[h] * (1.0 - z) * (1.0 - n * n);
            }
            // dq = Un^T dn_pre; the n-gate recurrent weights act on q = r*h_prev.
            for (std::size_t h = 0; h < hidden; ++h) {
                double acc = 0.0;
                for (std::size_t u = 0; u < hidden; ++u)
                    acc += params.rec_wh(2 * hidden + u, h) * dn[u];
                dq[h] = acc;
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                const double r = cache.gate_r(tt, h);
                const double h_prev = tt > 0 ? cache.hidden(tt - 1, h) : 0.0;
                dr[h] = dq[h] * h_prev * r * (1.0 - r);
                dh_prev[h] = dh[h] * cache.gate_z(tt, h) + dq[h] * r;
            }
            const Vec* gate_grads[3] = {&dz, &dr, &dn};
            for (std::size_t gate = 0; gate < 3; ++gate) {
                const Vec& dg_pre = *gate_grads[gate];
                for (std::size_t h = 0; h < hidden; ++h) {
                    const std::size_t row = gate * hidden + h;
                    const double dgp = dg_pre[h];
                    g.rec_b[row] += dgp;
                    for (std::size_t f = 0; f < filters; ++f) {
                        g.rec_wx(row, f) += dgp * cache.conv_act(f, tt);
                        dconv_act(f, tt) += params.rec_wx(row, f) * dgp;
                    }
                    for (std::size_t hh = 0; hh < hidden; ++hh) {
                        const double rec_in = gate == 2
                                                  ? cache.gru_q(tt, hh)
                                                  : (tt > 0 ? cache.hidden(tt - 1, hh) : 0.0);
                        g.rec_wh(row, hh) += dgp * rec_in;
                        if (gate != 2)
                            dh_prev[hh] += params.rec_wh(row, hh) * dgp;
                    }
                }
            }
            dh = dh_prev;
        }
    }

    // Through the conv dropout, ReLU and kernel.
    for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t j = 0; j < steps; ++j) {
            double d = dconv_act(f, j);
            if (!cache.mask_conv.empty()) d *= cache.mask_conv[f * steps + j];
            if (cache.conv_pre(f, j) <= 0.0) d = 0.0;
            if (d == 0.0) continue;
            g.conv_b[f] += d;
            for (std::size_t ch = 0; ch < k; ++ch)
                for (std::size_t u = 0; u < kern; ++u)
                    g.conv_w(f, ch * kern + u) += d * cache.input(ch, j + u);
        }
    }

    // L2 applies to weights, not biases.
    if (lambda > 0.0) {
        const double two_lambda = 2.0 * lambda;
        for (std::size_t i = 0; i < g.conv_w.data.size(); ++i)
            g.conv_w.data[i] += two_lambda * params.conv_w.data[i];
        for (std::size_t i = 0; i < g.rec_wx.data.size(); ++i)
            g.rec_wx.data[i] += two_lambda * params.rec_wx.data[i];
        for (std::size_t i = 0; i < g.rec_wh.data.size(); ++i)
            g.rec_wh.data[i] += two_lambda * params.rec_wh.data[i];
        for (std::size_t i = 0; i < g.dense_w.data.size(); ++i)
            g.dense_w.data[i] += two_lambda * params.dense_w.data[i];
        for (std::size_t i = 0; i < g.out_w.size(); ++i)
            g.out_w[i] += two_lambda * params.out_w[i];
    }
    return g;
}

void sgd_step(ModelParams& params, const Gradients& grads, double alpha) {
    auto* gp = &grads;
    std::size_t tensor = 0;
    const Vec* gtensors[9] = {&gp->conv_w.data, &gp->conv_b, &gp->rec_wx.data, &gp->rec_wh.data,
                              &gp->rec_b,       &gp->dense_w.data, &gp->dense_b, &gp->out_w,
                              &gp->out_b};
    for_each_tensor(params, [&](Vec& v) {
        const Vec& gv = *gtensors[tensor++];
        if (gv.size() != v.size()) throw ShapeMismatch("gradient shape does not match params");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= alpha * gv[i];
    });
}

void zero(ModelParams& p) {
    for_each_tensor(p, [](Vec& v) { std::fill(v.begin(), v.end(), 0.0); });
}

double squared_norm(const ModelParams& p) {
    double acc = 0.0;
    for_each_tensor(p, [&](const Vec& v) {
        for (double x : v) acc += x * x;
    });
    return acc;
}

void add_scaled(ModelParams& acc, const ModelParams& g, double factor) {
    std::size_t tensor = 0;
    const Vec* gtensors[9] = {&g.conv_w.data, &g.conv_b, &g.rec_wx.data, &g.rec_wh.data,
                              &g.rec_b,       &g.dense_w.data, &g.dense_b, &g.out_w, &g.out_b};
    for_each_tensor(acc, [&](Vec& v) {
        const Vec& gv = *gtensors[tensor++];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += factor * gv[i];
    });
}

void scale(ModelParams& p, double factor) {
    for_each_tensor(p, [&](Vec& v) {
        for (double& x : v) x *= factor;
    });
}

namespace {

Gradients batch_gradients_impl(const NetConfig& config, const ModelParams& params,
                               const WindowedDataset& data, std::span<const std::size_t> batch,
                               int epoch, bool use_omp) {
    std::vector<Gradients> per_sample(batch.size());
    const auto kernel = [&](std::size_t b) {
        const std::size_t idx = batch[b];
        Rng rng(mask_seed(config.seed, epoch, idx));
        Cache cache;
        forward(config, params, data.inputs[idx].values, true, &rng, &cache);
        per_sample[b] = backward(config, params, cache, data.targets[idx]);
    };
    if (use_omp) {
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch.size()); ++b)
            kernel(static_cast<std::size_t>(b));
    } else {
        for (std::size_t b = 0; b < batch.size(); ++b) kernel(b);
    }
    // Sum in sample order so the result is independent of threading.
    Gradients acc = make_like(config);
    for (const Gradients& g : per_sample) add_scaled(acc, g, 1.0);
    scale(acc, 1.0 / static_cast<double>(batch.size()));
    return acc;
}

double dataset_mse_impl(const NetConfig& config, const ModelParams& params,
                        const WindowedDataset& data, bool use_omp) {
    Vec sq(data.size());
    const auto kernel = [&](std::size_t i) {
        const double pred = forward(config, params, data.inputs[i].values, false, nullptr, nullptr);
        const double err = pred - data.targets[i];
        sq[i] = err * err;
    };
    if (use_omp) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i)
            kernel(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) kernel(i);
    }
    double acc = 0.0;
    for (double v : sq) acc += v;
    return acc / static_cast<double>(data.size());
}

}  // namespace

Gradients batch_gradients(const NetConfig& config, const ModelParams& params,
                          const WindowedDataset& data, std::span<const std::size_t> batch,
                          int epoch) {
    return batch_gradients_impl(config, params, data, batch, epoch, parallel::enabled());
}

Gradients batch_gradients_serial(const NetConfig& config, const ModelParams& params,
                                 const WindowedDataset& data, std::span<const std::size_t> batch,
                                 int epoch) {
    return batch_gradients_impl(config, params, data, batch, epoch, false);
}

double dataset_mse(const NetConfig& config, const ModelParams& params,
                   const WindowedDataset& data) {
    return dataset_mse_impl(config, params, data, parallel::enabled());
}

double dataset_mse_serial(const NetConfig& config, const ModelParams& params,
                          const WindowedDataset& data) {
    return dataset_mse_impl(config, params, data, false);
}

TrainReport train(const NetConfig& config, const WindowedDataset& train_set,
                  const WindowedDataset& val_set) {
    config.validate();
    check_dataset_shape(config, train_set, "train");
    check_dataset_shape(config, val_set, "validation");

    ModelParams params = init(config);
    Rng shuffle_rng(mix64(config.seed, 1));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainReport report;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t len =
                std::min(static_cast<std::size_t>(config.batch_size), order.size() - start);
            Gradients g = batch_gradients(config, params, train_set,
                                          std::span<const std::size_t>(order).subspan(start, len),
                                          epoch);
            const double norm = std::sqrt(squared_norm(g));
            if (norm > kClipNorm) scale(g, kClipNorm / norm);
            sgd_step(params, g, config.learning_rate);
        }

        const double train_mse = dataset_mse(config, params, train_set);
        const double val_mse = dataset_mse(config, params, val_set);
        if (!std::isfinite(train_mse) || !std::isfinite(val_mse))
            throw DivergenceDetected("training diverged at epoch " + std::to_string(epoch) +
                                     " (train MSE " + std::to_string(train_mse) + ", val MSE " +
                                     std::to_string(val_mse) + "); try a lower learning rate");
        report.train_loss.push_back(train_mse);
        report.val_loss.push_back(val_mse);

        if (val_mse < best_val) {
            best_val = val_mse;
            report.best_epoch = epoch;
            report.params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return report;
}

double predict(const NetConfig& config, const ModelParams& params, const FeatureWindow& window) {
    return forward(config, params, window.values, false, nullptr, nullptr);
}

Vec predict_all(const NetConfig& config, const ModelParams& params, const WindowedDataset& data) {
    Vec out(data.size());
    const auto kernel = [&](std::size_t i) {
        out[i] = forward(config, params, data.inputs[i].values, false, nullptr, nullptr);
    };
    if (parallel::enabled()) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i)
            kernel(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) kernel(i);
    }
    return out;
}

namespace {

using nlohmann::ordered_json;

ordered_json mat_to_json(const Mat& m) {
    return ordered_json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Mat mat_from_json(const ordered_json& j) {
    Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<Vec>();
    if (m.data.size() != m.rows * m.cols) throw IoError("matrix payload size mismatch");
    return m;
}

ordered_json config_to_json(const NetConfig& c) {
    return ordered_json{
        {"input_channels", c.input_channels},
        {"window", c.window},
        {"conv_filters", c.conv_filters},
        {"conv_kernel", c.conv_kernel},
        {"cell", to_string(c.cell)},
        {"hidden", c.hidden},
        {"dense_hidden", c.dense_hidden},
        {"dropout_rate", c.dropout_rate},
        {"l2_lambda", c.l2_lambda},
        {"learning_rate", c.learning_rate},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"patience", c.patience},
        {"seed", c.seed},
    };
}

NetConfig config_from_json(const ordered_json& j) {
    NetConfig c;
    c.input_channels = j.at("input_channels").get<int>();
    c.window = j.at("window").get<int>();
    c.conv_filters = j.at("conv_filters").get<int>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.cell = parse_cell_type(j.at("cell").get<std::string>());
    c.hidden = j.at("hidden").get<int>();
    c.dense_hidden = j.at("dense_hidden").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.l2_lambda = j.at("l2_lambda").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.patience = j.at("patience").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_params(const NetConfig& config, const ModelParams& params, const std::string& path) {
    ordered_json j{
        {"format", "dmaflow-model"},
        {"version", 1},
        {"config", config_to_json(config)},
        {"params",
         ordered_json{
             {"conv_w", mat_to_json(params.conv_w)},
             {"conv_b", params.conv_b},
             {"rec_wx", mat_to_json(params.rec_wx)},
             {"rec_wh", mat_to_json(params.rec_wh)},
             {"rec_b", params.rec_b},
             {"dense_w", mat_to_json(params.dense_w)},
             {"dense_b", params.dense_b},
             {"out_w", params.out_w},
             {"out_b", params.out_b},
         }},
    };
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

std::pair<NetConfig, ModelParams> load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("cannot parse model file " + path + ": " + e.what());
    }
    if (j.value("format", "") != "dmaflow-model" || j.value("version", 0) != 1)
        throw IoError("unrecognised model file format: " + path);
    NetConfig cfg = config_from_json(j.at("config"));
    const auto& p = j.at("params");
    ModelParams params;
    params.conv_w = mat_from_json(p.at("conv_w"));
    params.conv_b = p.at("conv_b").get<Vec>();
    params.rec_wx = mat_from_json(p.at("rec_wx"));
    params.rec_wh = mat_from_json(p.at("rec_wh"));
    params.rec_b = p.at("rec_b").get<Vec>();
    params.dense_w = mat_from_json(p.at("dense_w"));
    params.dense_b = p.at("dense_b").get<Vec>();
    params.out_w = p.at("out_w").get<Vec>();
    params.out_b = p.at("out_b").get<Vec>();
    return {cfg, params};
}

}  // namespace dmaflow::nnet
