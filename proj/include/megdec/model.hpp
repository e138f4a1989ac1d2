#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "megdec/nn_ops.hpp"
#include "megdec/taps.hpp"

namespace megdec {

enum class Arch { resnet_cnn, stft_cnn, cnn_transformer };
enum class NormKind { none, layer, batch, group };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);
std::string norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

struct ModelSpec {
    Arch arch = Arch::resnet_cnn;
    Index channels = 306;
    Index samples = 125;
    int n_classes = 39;
    Index hidden_dim = 32;         // paper-scale value is 256
    int cnn_blocks = 5;            // total conv layers in the 1-d backbone
    Index kernel = 7;
    bool input_instance_norm = true;
    NormKind block_norm = NormKind::none;  // optional extra norm before pooling
    Index group_norm_groups = 8;
    int transformer_layers = 2;    // paper-scale value is 4
    int transformer_heads = 8;
    Index stft_n_fft = 25;
    Index stft_hop = 5;
    std::string nonlinearity = "relu";

    void validate() const;  // throws ConfigError
};

/// A built network: the spec plus named parameters in creation order and
/// batch-norm running buffers. Sublayer tap names are stable for a fixed
/// spec, which save/load relies on.
class Model {
public:
    static Model build(const ModelSpec& spec, std::uint64_t init_seed);

    const ModelSpec& spec() const { return spec_; }

    Tensorf forward(const Tensorf& batch, bool training, TapRegistry<float>* taps = nullptr);

    std::vector<Tensorf>& params() { return params_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    Tensorf& param(const std::string& name);
    long long param_count() const;

    /// Deep copies of parameter and batch-norm buffers, for checkpoint
    /// retention and restoration.
    std::vector<ArrayX<float>> snapshot_state() const;
    void restore_state(const std::vector<ArrayX<float>>& state);

    void save(const std::string& path) const;
    static Model load(const std::string& path);

    std::vector<BatchNormState<float>>& bn_states() { return bn_states_; }
    const std::vector<std::string>& bn_names() const { return bn_names_; }

private:
    Model() = default;

    Tensorf forward_resnet(const Tensorf& x, bool training, TapRegistry<float>* taps);
    Tensorf forward_stft(const Tensorf& x, bool training, TapRegistry<float>* taps);
    Tensorf forward_transformer(const Tensorf& x, bool training, TapRegistry<float>* taps);

    Tensorf conv_block(const Tensorf& x, const std::string& name, bool training,
                       TapRegistry<float>* taps);
    Tensorf conv2d_block(const Tensorf& x, const std::string& name, TapRegistry<float>* taps);
    Tensorf encoder_layer(const Tensorf& x, int layer, TapRegistry<float>* taps);
    Tensorf extra_norm(const Tensorf& x, bool training, TapRegistry<float>* taps);

    Tensorf add_param(const std::string& name, Shape shape);
    int add_bn(const std::string& name, Index channels);

    ModelSpec spec_;
    std::vector<std::string> param_names_;
    std::vector<Tensorf> params_;
    std::unordered_map<std::string, size_t> param_index_;
    std::vector<std::string> bn_names_;
    std::vector<BatchNormState<float>> bn_states_;
    std::unordered_map<std::string, size_t> bn_index_;
};

/// Argmax per row; ties go to the lowest class id.
std::vector<int> predict(const Tensorf& logits);

}  // namespace megdec
