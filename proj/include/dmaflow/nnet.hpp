#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>

#include "dmaflow/mat.hpp"
#include "dmaflow/rng.hpp"
#include "dmaflow/series.hpp"

namespace dmaflow::nnet {

enum class CellType { kLstm, kGru };

std::string to_string(CellType c);
CellType parse_cell_type(const std::string& s);  // throws InvalidConfig

// Architecture and training hyperparameters. The regression stack is a 1-D
// convolution over time (zones as input channels), a single recurrent layer
// (LSTM or GRU) over the conv output sequence, a ReLU dense layer and a
// scalar linear output. Dropout (inverted) is applied after the conv and
// after the recurrent layer during training only.
struct NetConfig {
    int input_channels = 1;
    int window = 15;
    int conv_filters = 16;
    int conv_kernel = 3;
    CellType cell = CellType::kLstm;
    int hidden = 32;
    int dense_hidden = 16;
    double dropout_rate = 0.2;
    double l2_lambda = 1e-4;
    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 32;
    int patience = 5;
    std::uint64_t seed = 0;

    int conv_steps() const { return window - conv_kernel + 1; }
    int gates() const { return cell == CellType::kLstm ? 4 : 3; }
    void validate() const;  // throws InvalidConfig
};

// All learnable tensors. Also reused as the gradient container, since the
// shapes are identical.
struct ModelParams {
    Mat conv_w;   // F x (k * kernel), channel-major taps
    Vec conv_b;   // F
    Mat rec_wx;   // G*H x F   gate-stacked input weights
    Mat rec_wh;   // G*H x H   gate-stacked recurrent weights
    Vec rec_b;    // G*H
    Mat dense_w;  // Dh x H
    Vec dense_b;  // Dh
    Vec out_w;    // Dh
    Vec out_b;    // 1

    bool operator==(const ModelParams&) const = default;
};

using Gradients = ModelParams;

// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out)) per layer),
// zero biases; deterministic per config.seed.
ModelParams init(const NetConfig& config);

// Intermediate activations retained for the backward pass.
struct Cache {
    Mat input;     // k x W
    Mat conv_pre;  // F x L
    Mat conv_act;  // F x L, after ReLU and (in training) dropout
    Vec mask_conv;
    Mat gate_i, gate_f, gate_g, gate_o;  // LSTM, each L x H
    Mat gate_z, gate_r, gate_n, gru_q;   // GRU, each L x H
    Mat cell_state;                      // L x H
    Mat hidden;                          // L x H
    Vec mask_hidden;
    Vec hidden_dropped;  // H
    Vec dense_pre;       // Dh
    Vec dense_act;       // Dh
    double prediction = 0.0;
    bool training = false;
};

// Inverted dropout: each value is zeroed with probability rate, survivors are
// scaled by 1/(1-rate), so the expectation matches the inference path.
void apply_dropout(std::span<double> values, double rate, Rng& rng, Vec& mask_out);

// Returns the scalar prediction; fills cache when given. rng is consumed only
// when training with dropout_rate > 0.
double forward(const NetConfig& config, const ModelParams& params, const Mat& window,
               bool training, Rng* rng, Cache* cache);

// Exact gradient of (prediction - target)^2 + l2_lambda * sum(weights^2) with
// respect to every parameter, backpropagated through the dense head, the
// recurrent unroll and the convolution. Biases carry no L2 term.
Gradients backward(const NetConfig& config, const ModelParams& params, const Cache& cache,
                   double target);

// w <- w - alpha * gradient, every tensor.
void sgd_step(ModelParams& params, const Gradients& grads, double alpha);

void zero(ModelParams& p);
double squared_norm(const ModelParams& p);
void add_scaled(ModelParams& acc, const ModelParams& g, double factor);
void scale(ModelParams& p, double factor);

// Mean of per-sample gradients over batch (dataset indices), each including
// the L2 term. Dropout masks are derived from (seed, epoch, sample index), so
// the result is bit-identical however many threads run; the accumulation is
// performed in sample order.
Gradients batch_gradients(const NetConfig& config, const ModelParams& params,
                          const WindowedDataset& data, std::span<const std::size_t> batch,
                          int epoch);
Gradients batch_gradients_serial(const NetConfig& config, const ModelParams& params,
                                 const WindowedDataset& data, std::span<const std::size_t> batch,
                                 int epoch);

// Inference-mode mean squared error over a whole dataset.
double dataset_mse(const NetConfig& config, const ModelParams& params, const WindowedDataset& data);
double dataset_mse_serial(const NetConfig& config, const ModelParams& params,
                          const WindowedDataset& data);

struct TrainReport {
    Vec train_loss;  // per epoch, MSE over the training set
    Vec val_loss;    // per epoch, MSE over the validation set
    int best_epoch = 0;  // 1-based
    ModelParams params;  // snapshot at the best validation epoch
};

// Mini-batch SGD on the MSE with gradient clipping (global norm 5) and early
// stopping on validation MSE. Deterministic per config.seed: initialisation,
// shuffling and dropout all derive from it.
TrainReport train(const NetConfig& config, const WindowedDataset& train_set,
                  const WindowedDataset& val_set);

double predict(const NetConfig& config, const ModelParams& params, const FeatureWindow& window);

// Batch inference over a dataset; index order is preserved.
Vec predict_all(const NetConfig& config, const ModelParams& params, const WindowedDataset& data);

// Versioned JSON artifact; round-trips bit-exactly.
void save_params(const NetConfig& config, const ModelParams& params, const std::string& path);
std::pair<NetConfig, ModelParams> load_params(const std::string& path);

}  // namespace dmaflow::nnet
