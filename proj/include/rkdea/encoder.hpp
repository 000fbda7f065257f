#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rkdea/checkpoint.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/rng.hpp"
#include "rkdea/tape.hpp"

namespace rkdea {

template <typename T>
struct EncoderLayer {
    DenseMatrix<T> W;    // d x d aggregation weights
    DenseMatrix<T> W_T;  // d x d transform-gate weights
    DenseMatrix<T> b_T;  // 1 x d transform-gate bias
};

// Trainable state of the two-layer highway GCN. Every layer keeps width d so
// the highway blend of layer input and GCN output is well-typed.
template <typename T>
struct EncoderParams {
    DenseMatrix<T> X;
    std::vector<EncoderLayer<T>> layers;
    bool freeze_features = false;

    std::size_t dim() const { return X.cols(); }
    std::size_t nodes() const { return X.rows(); }
};

// W gets symmetric-uniform Glorot scaling; gates start closed (W_T zero,
// bias -1) so early layers mostly carry their input through; X comes from
// the feature table when given, else i.i.d. normal with stddev 1/sqrt(d).
template <typename T>
EncoderParams<T> init_encoder_params(std::size_t n_nodes, std::size_t dim,
                                     std::size_t layer_count, Rng& rng,
                                     const std::optional<DenseMatrix<double>>& features = {},
                                     bool freeze_features = false) {
    if (n_nodes == 0 || dim == 0) throw InputError("init_encoder_params: empty shape");
    if (layer_count == 0) throw InputError("init_encoder_params: need at least one layer");
    EncoderParams<T> p;
    p.freeze_features = freeze_features;
    if (features) {
        if (features->rows() != n_nodes)
            throw ConfigError("feature table has " + std::to_string(features->rows()) +
                              " rows, graph has " + std::to_string(n_nodes) + " nodes");
        if (features->cols() != dim)
            throw ConfigError("feature table width " + std::to_string(features->cols()) +
                              " does not match dim " + std::to_string(dim));
        p.X = features->template cast<T>();
    } else {
        p.X = DenseMatrix<T>(n_nodes, dim);
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        for (auto& v : p.X.data()) v = static_cast<T>(s * rng.normal());
    }
    const double glorot = std::sqrt(6.0 / static_cast<double>(dim + dim));
    for (std::size_t l = 0; l < layer_count; ++l) {
        EncoderLayer<T> layer;
        layer.W = DenseMatrix<T>(dim, dim);
        for (auto& v : layer.W.data()) v = static_cast<T>(rng.uniform(-glorot, glorot));
        layer.W_T = DenseMatrix<T>(dim, dim);
        layer.b_T = DenseMatrix<T>::constant(1, dim, T{-1});
        p.layers.push_back(std::move(layer));
    }
    return p;
}

// ReLU(A_norm * H * W)
template <typename T>
NodeId gcn_layer(Tape<T>& tape, NodeId h, const SparseMatrix<T>& a_norm, NodeId w) {
    return tape.relu(tape.spmm(a_norm, tape.matmul(h, w)));
}

// Transform gate G = sigmoid(H_prev * W_T + b_T); output G (.) H_gcn + (1-G) (.) H_prev.
template <typename T>
NodeId highway_combine(Tape<T>& tape, NodeId h_prev, NodeId h_gcn, NodeId w_t, NodeId b_t) {
    const NodeId gate = tape.sigmoid(tape.add_rowvec(tape.matmul(h_prev, w_t), b_t));
    return tape.add(tape.mul(gate, h_gcn), tape.mul(tape.one_minus(gate), h_prev));
}

struct EncoderLayerNodes {
    NodeId w, w_t, b_t;
};

struct EncoderNodes {
    NodeId x;
    std::vector<EncoderLayerNodes> layers;
    NodeId output;
};

// Records the full forward pass on the tape and hands back the leaf ids so
// the caller can read gradients after backward.
template <typename T>
EncoderNodes encode(Tape<T>& tape, const EncoderParams<T>& params,
                    const SparseMatrix<T>& a_norm) {
    EncoderNodes nodes;
    nodes.x = tape.leaf(params.X, !params.freeze_features);
    NodeId h = nodes.x;
    for (const EncoderLayer<T>& layer : params.layers) {
        EncoderLayerNodes ln;
        ln.w = tape.leaf(layer.W, true);
        ln.w_t = tape.leaf(layer.W_T, true);
        ln.b_t = tape.leaf(layer.b_T, true);
        nodes.layers.push_back(ln);
        h = highway_combine(tape, h, gcn_layer(tape, h, a_norm, ln.w), ln.w_t, ln.b_t);
    }
    nodes.output = h;
    return nodes;
}

// Forward pass only, for evaluation and frozen-teacher snapshots.
template <typename T>
DenseMatrix<T> encode_values(const EncoderParams<T>& params, const SparseMatrix<T>& a_norm,
                             int threads = 1) {
    Tape<T> tape(threads, true);
    return tape.value(encode(tape, params, a_norm).output);
}

inline std::string layer_tensor_name(std::size_t layer, const char* field) {
    return "layers." + std::to_string(layer) + "." + field;
}

template <typename T>
void append_encoder_tensors(const EncoderParams<T>& p, std::vector<TensorBlock>& out) {
    out.push_back(TensorBlock::from_matrix("X", p.X));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        out.push_back(TensorBlock::from_matrix(layer_tensor_name(l, "W"), p.layers[l].W));
        out.push_back(TensorBlock::from_matrix(layer_tensor_name(l, "W_T"), p.layers[l].W_T));
        out.push_back(TensorBlock::from_matrix(layer_tensor_name(l, "b_T"), p.layers[l].b_T));
    }
}

template <typename T>
EncoderParams<T> encoder_params_from_checkpoint(const Checkpoint& ckpt) {
    EncoderParams<T> p;
    p.X = ckpt.require("X").to_matrix<T>();
    p.freeze_features = ckpt.config.value("freeze_features", false);
    for (std::size_t l = 0; ckpt.find(layer_tensor_name(l, "W")); ++l) {
        EncoderLayer<T> layer;
        layer.W = ckpt.require(layer_tensor_name(l, "W")).to_matrix<T>();
        layer.W_T = ckpt.require(layer_tensor_name(l, "W_T")).to_matrix<T>();
        layer.b_T = ckpt.require(layer_tensor_name(l, "b_T")).to_matrix<T>();
        p.layers.push_back(std::move(layer));
    }
    if (p.layers.empty())
        throw CheckpointError(CheckpointError::Kind::Header, "checkpoint holds no encoder layers");
    return p;
}

}  // namespace rkdea
