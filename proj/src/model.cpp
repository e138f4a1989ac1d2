#include "megdec/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "megdec/fft.hpp"

namespace megdec {

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::resnet_cnn: return "resnet_cnn";
        case Arch::stft_cnn: return "stft_cnn";
        case Arch::cnn_transformer: return "cnn_transformer";
    }
    throw UsageError("arch_name: bad arch value");
}

Arch arch_from_name(const std::string& name) {
    if (name == "resnet_cnn") return Arch::resnet_cnn;
    if (name == "stft_cnn") return Arch::stft_cnn;
    if (name == "cnn_transformer") return Arch::cnn_transformer;
    throw ConfigError("unknown architecture '" + name + "'");
}

std::string norm_kind_name(NormKind k) {
    switch (k) {
        case NormKind::none: return "none";
        case NormKind::layer: return "layer";
        case NormKind::batch: return "batch";
        case NormKind::group: return "group";
    }
    throw UsageError("norm_kind_name: bad kind value");
}

NormKind norm_kind_from_name(const std::string& name) {
    if (name == "none") return NormKind::none;
    if (name == "layer") return NormKind::layer;
    if (name == "batch") return NormKind::batch;
    if (name == "group") return NormKind::group;
    throw ConfigError("unknown norm kind '" + name + "'");
}

void ModelSpec::validate() const {
    if (channels < 1 || samples < 1) throw ConfigError("model: bad input geometry");
    if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
    if (hidden_dim < 1) throw ConfigError("model: hidden_dim must be >= 1");
    if (cnn_blocks < 1) throw ConfigError("model: cnn_blocks must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("model: kernel must be odd to preserve temporal length");
    }
    if (nonlinearity != "relu") {
        throw ConfigError("model: unsupported nonlinearity '" + nonlinearity + "'");
    }
    if (group_norm_groups < 1 || hidden_dim % group_norm_groups != 0) {
        throw ConfigError("model: group_norm_groups must divide hidden_dim");
    }
    if (arch == Arch::cnn_transformer) {
        if (transformer_layers < 1) throw ConfigError("model: transformer_layers must be >= 1");
        if (transformer_heads < 1 || hidden_dim % transformer_heads != 0) {
            throw ConfigError("model: hidden_dim must be divisible by transformer_heads");
        }
    }
    if (arch == Arch::stft_cnn) {
        if (stft_hop < 1) throw ConfigError("model: stft_hop must be >= 1");
        if (stft_n_fft < 1 || stft_n_fft > samples) {
            throw ConfigError("model: stft_n_fft must be in [1, samples]");
        }
    }
}

namespace {

void fill_normal(Tensorf& t, float std, Rng& rng) {
    for (Index i = 0; i < t.numel(); ++i) t.array()[i] = std * float(rng.normal());
}

}  // namespace

Tensorf Model::add_param(const std::string& name, Shape shape) {
    Tensorf t = Tensorf::zeros(std::move(shape));
    t.set_requires_grad(true);
    param_index_[name] = params_.size();
    param_names_.push_back(name);
    params_.push_back(t);
    return t;
}

int Model::add_bn(const std::string& name, Index channels) {
    bn_index_[name] = bn_states_.size();
    bn_names_.push_back(name);
    bn_states_.push_back(BatchNormState<float>::init(channels));
    return int(bn_states_.size()) - 1;
}

Tensorf& Model::param(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw UsageError("no parameter named '" + name + "'");
    return params_[it->second];
}

long long Model::param_count() const {
    long long n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

Model Model::build(const ModelSpec& spec, std::uint64_t init_seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    Rng rng(substream(init_seed, 0xB11D));
    Index D = spec.hidden_dim;

    auto conv1d_block_params = [&](const std::string& name, Index cin) {
        Tensorf w = m.add_param(name + ".w", {D, cin, spec.kernel});
        fill_normal(w, std::sqrt(2.0f / float(cin * spec.kernel)), rng);
        m.add_param(name + ".b", {D});
        m.add_param(name + ".gn_g", {D}).array().setOnes();
        m.add_param(name + ".gn_b", {D});
    };
    auto conv2d_block_params = [&](const std::string& name, Index cin, Index k) {
        Tensorf w = m.add_param(name + ".w", {D, cin, k, k});
        fill_normal(w, std::sqrt(2.0f / float(cin * k * k)), rng);
        m.add_param(name + ".b", {D});
        m.add_param(name + ".gn_g", {D}).array().setOnes();
        m.add_param(name + ".gn_b", {D});
    };
    auto linear_params = [&](const std::string& name, Index dout, Index din, float gain2) {
        Tensorf w = m.add_param(name + ".w", {dout, din});
        fill_normal(w, std::sqrt(gain2 / float(din)), rng);
        m.add_param(name + ".b", {dout});
    };

    switch (spec.arch) {
        case Arch::resnet_cnn:
            for (int b = 0; b < spec.cnn_blocks; ++b) {
                conv1d_block_params("conv" + std::to_string(b), b == 0 ? spec.channels : D);
            }
            break;
        case Arch::stft_cnn:
            for (int b = 0; b < spec.cnn_blocks; ++b) {
                conv2d_block_params("conv" + std::to_string(b), b == 0 ? 1 : D, 3);
            }
            break;
        case Arch::cnn_transformer:
            conv1d_block_params("conv0", spec.channels);
            conv1d_block_params("conv1", D);
            for (int l = 0; l < spec.transformer_layers; ++l) {
                std::string enc = "enc" + std::to_string(l);
                linear_params(enc + ".attn.q", D, D, 1.0f);
                linear_params(enc + ".attn.k", D, D, 1.0f);
                linear_params(enc + ".attn.v", D, D, 1.0f);
                linear_params(enc + ".attn.proj", D, D, 1.0f);
                m.add_param(enc + ".ln1.g", {D}).array().setOnes();
                m.add_param(enc + ".ln1.b", {D});
                linear_params(enc + ".ffn.l1", 4 * D, D, 2.0f);
                linear_params(enc + ".ffn.l2", D, 4 * D, 1.0f);
                m.add_param(enc + ".ln2.g", {D}).array().setOnes();
                m.add_param(enc + ".ln2.b", {D});
            }
            break;
    }
    if (spec.block_norm != NormKind::none) {
        m.add_param("norm.g", {D}).array().setOnes();
        m.add_param("norm.b", {D});
        if (spec.block_norm == NormKind::batch) m.add_bn("norm", D);
    }
    linear_params("head", spec.n_classes, D, 1.0f);
    return m;
}

// ----------------------------- forward pieces -----------------------------

Tensorf Model::conv_block(const Tensorf& x, const std::string& name, bool,
                          TapRegistry<float>* taps) {
    Tensorf h = conv1d(x, param(name + ".w"), param(name + ".b"), 1, (spec_.kernel - 1) / 2);
    h = group_norm(h, param(name + ".gn_g"), param(name + ".gn_b"), spec_.group_norm_groups);
    h = relu(h);
    check_finite(h, name);
    tap_record(taps, name, h);
    return h;
}

Tensorf Model::conv2d_block(const Tensorf& x, const std::string& name, TapRegistry<float>* taps) {
    Tensorf h = conv2d(x, param(name + ".w"), param(name + ".b"), 1, 1);
    Index B = h.dim(0), C = h.dim(1), H = h.dim(2), W = h.dim(3);
    h = reshape(h, {B, C, H * W});
    h = group_norm(h, param(name + ".gn_g"), param(name + ".gn_b"), spec_.group_norm_groups);
    h = relu(h);
    h = reshape(h, {B, C, H, W});
    check_finite(h, name);
    tap_record(taps, name, h);
    return h;
}

/// Optional extra normalization on the pre-pooling [B',D,T'] representation.
Tensorf Model::extra_norm(const Tensorf& x, bool training, TapRegistry<float>* taps) {
    if (spec_.block_norm == NormKind::none) return x;
    Tensorf h;
    switch (spec_.block_norm) {
        case NormKind::layer:
            h = group_norm(x, param("norm.g"), param("norm.b"), 1);
            break;
        case NormKind::group:
            h = group_norm(x, param("norm.g"), param("norm.b"), spec_.group_norm_groups);
            break;
        case NormKind::batch:
            h = batch_norm(x, param("norm.g"), param("norm.b"), bn_states_[bn_index_.at("norm")],
                           training);
            break;
        default:
            return x;
    }
    check_finite(h, "norm");
    tap_record(taps, "norm", h);
    return h;
}

Tensorf Model::forward_resnet(const Tensorf& x, bool training, TapRegistry<float>* taps) {
    Tensorf h = conv_block(x, "conv0", training, taps);
    int next = 1;
    while (next + 1 < spec_.cnn_blocks) {
        Tensorf res = h;
        h = conv_block(h, "conv" + std::to_string(next), training, taps);
        h = conv_block(h, "conv" + std::to_string(next + 1), training, taps);
        h = add(h, res);
        next += 2;
    }
    if (next < spec_.cnn_blocks) {
        h = conv_block(h, "conv" + std::to_string(next), training, taps);
    }
    h = extra_norm(h, training, taps);
    return mean_lastdim(h);
}

Tensorf Model::forward_stft(const Tensorf& x, bool training, TapRegistry<float>* taps) {
    Index B = x.dim(0), C = x.dim(1), T = x.dim(2);
    Index frames = stft_frames(T, spec_.stft_n_fft, spec_.stft_hop);
    Index bins = fft_bins(spec_.stft_n_fft);
    // fixed (untrainable) front-end: per-channel magnitude spectrogram
    Tensorf spect = Tensorf::zeros({B * C, 1, bins, frames});
    for (Index r = 0; r < B * C; ++r) {
        RowMatrix<float> mag =
            stft_magnitude(x.array().data() + r * T, T, spec_.stft_n_fft, spec_.stft_hop);
        Eigen::Map<RowMatrix<float>>(spect.array().data() + r * bins * frames, bins, frames) = mag;
    }

    Tensorf h = conv2d_block(spect, "conv0", taps);
    int next = 1;
    while (next + 1 < spec_.cnn_blocks) {
        Tensorf res = h;
        h = conv2d_block(h, "conv" + std::to_string(next), taps);
        h = conv2d_block(h, "conv" + std::to_string(next + 1), taps);
        h = add(h, res);
        next += 2;
    }
    if (next < spec_.cnn_blocks) {
        h = conv2d_block(h, "conv" + std::to_string(next), taps);
    }
    h = reshape(h, {B * C, spec_.hidden_dim, bins * frames});
    h = extra_norm(h, training, taps);
    h = mean_lastdim(h);                      // [B*C, D]
    h = reshape(h, {B, C, spec_.hidden_dim});
    h = permute(h, {0, 2, 1});                // [B, D, C]
    return mean_lastdim(h);                   // mean over channels
}

Tensorf Model::encoder_layer(const Tensorf& x, int layer, TapRegistry<float>* taps) {
    std::string enc = "enc" + std::to_string(layer);
    Index B = x.dim(0), T = x.dim(1), D = x.dim(2);
    Index H = spec_.transformer_heads;
    Index dk = D / H;

    Tensorf flat = reshape(x, {B * T, D});
    auto split_heads = [&](const Tensorf& t) {
        return reshape(permute(reshape(t, {B, T, H, dk}), {0, 2, 1, 3}), {B * H, T, dk});
    };
    Tensorf q = split_heads(linear(flat, param(enc + ".attn.q.w"), param(enc + ".attn.q.b")));
    Tensorf k = split_heads(linear(flat, param(enc + ".attn.k.w"), param(enc + ".attn.k.b")));
    Tensorf v = split_heads(linear(flat, param(enc + ".attn.v.w"), param(enc + ".attn.v.b")));

    Tensorf scores = scale(bmm(q, permute(k, {0, 2, 1})), 1.0f / std::sqrt(float(dk)));
    Tensorf att = softmax_lastdim(scores);
    Tensorf ctx = bmm(att, v);  // [B*H, T, dk]
    ctx = reshape(permute(reshape(ctx, {B, H, T, dk}), {0, 2, 1, 3}), {B * T, D});
    Tensorf o = linear(ctx, param(enc + ".attn.proj.w"), param(enc + ".attn.proj.b"));
    Tensorf h = layer_norm_lastdim(add(x, reshape(o, {B, T, D})), param(enc + ".ln1.g"),
                                   param(enc + ".ln1.b"));
    check_finite(h, enc + ".attn");
    tap_record(taps, enc + ".attn", h);

    Tensorf f = linear(reshape(h, {B * T, D}), param(enc + ".ffn.l1.w"), param(enc + ".ffn.l1.b"));
    f = relu(f);
    f = linear(f, param(enc + ".ffn.l2.w"), param(enc + ".ffn.l2.b"));
    Tensorf out = layer_norm_lastdim(add(h, reshape(f, {B, T, D})), param(enc + ".ln2.g"),
                                     param(enc + ".ln2.b"));
    check_finite(out, enc + ".ffn");
    tap_record(taps, enc + ".ffn", out);
    return out;
}

Tensorf Model::forward_transformer(const Tensorf& x, bool training, TapRegistry<float>* taps) {
    Tensorf h = conv_block(x, "conv0", training, taps);
    h = conv_block(h, "conv1", training, taps);
    Index B = h.dim(0), D = h.dim(1), T = h.dim(2);
    h = permute(h, {0, 2, 1});  // [B, T, D]

    // fixed sinusoidal position encoding
    Tensorf pe = Tensorf::zeros({T, D});
    for (Index t = 0; t < T; ++t) {
        for (Index i = 0; i < D; i += 2) {
            double angle = double(t) / std::pow(10000.0, double(i) / double(D));
            pe.array()[t * D + i] = float(std::sin(angle));
            if (i + 1 < D) pe.array()[t * D + i + 1] = float(std::cos(angle));
        }
    }
    h = add_broadcast_rows(h, pe);

    for (int l = 0; l < spec_.transformer_layers; ++l) {
        h = encoder_layer(h, l, taps);
    }
    h = permute(h, {0, 2, 1});  // [B, D, T]
    h = extra_norm(h, training, taps);
    return mean_lastdim(h);
}

Tensorf Model::forward(const Tensorf& batch, bool training, TapRegistry<float>* taps) {
    if (batch.rank() != 3 || batch.dim(1) != spec_.channels || batch.dim(2) != spec_.samples) {
        throw DimensionError("forward: expected [B," + std::to_string(spec_.channels) + "," +
                             std::to_string(spec_.samples) + "], got " + shape_str(batch.shape()));
    }
    Tensorf x = batch;
    if (spec_.input_instance_norm) x = instance_norm(x);

    Tensorf pooled;
    switch (spec_.arch) {
        case Arch::resnet_cnn: pooled = forward_resnet(x, training, taps); break;
        case Arch::stft_cnn: pooled = forward_stft(x, training, taps); break;
        case Arch::cnn_transformer: pooled = forward_transformer(x, training, taps); break;
    }
    Tensorf logits = linear(pooled, param("head.w"), param("head.b"));
    check_finite(logits, "head");
    tap_record(taps, "head", logits);
    return logits;
}

std::vector<int> predict(const Tensorf& logits) {
    if (logits.rank() != 2) throw DimensionError("predict: expects logits[B,C]");
    Index B = logits.dim(0), C = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(B));
    for (Index b = 0; b < B; ++b) {
        const float* row = logits.array().data() + b * C;
        int best = 0;
        for (Index c = 1; c < C; ++c) {
            if (row[c] > row[best]) best = int(c);
        }
        out[size_t(b)] = best;
    }
    return out;
}

// ----------------------------- state and checkpoints -----------------------------

std::vector<ArrayX<float>> Model::snapshot_state() const {
    std::vector<ArrayX<float>> state;
    state.reserve(params_.size() + 2 * bn_states_.size());
    for (const auto& p : params_) state.push_back(p.array());
    for (const auto& bn : bn_states_) {
        state.push_back(bn.running_mean);
        state.push_back(bn.running_var);
    }
    return state;
}

void Model::restore_state(const std::vector<ArrayX<float>>& state) {
    if (state.size() != params_.size() + 2 * bn_states_.size()) {
        throw UsageError("restore_state: snapshot does not match this model");
    }
    size_t at = 0;
    for (auto& p : params_) {
        if (state[at].size() != p.numel()) throw UsageError("restore_state: size mismatch");
        p.array() = state[at++];
    }
    for (auto& bn : bn_states_) {
        bn.running_mean = state[at++];
        bn.running_var = state[at++];
    }
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'E', 'G', 'D', 'E', 'C', '1', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, std::uint32_t(s.size()));
    out.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::istream& in, const std::string& path) {
    std::uint32_t len = get_u32(in, path);
    if (len > (1u << 20)) throw ParseError(path + ": implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), std::streamsize(len));
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return s;
}

std::string spec_to_text(const ModelSpec& s) {
    std::ostringstream os;
    os << "arch=" << arch_name(s.arch) << "\n"
       << "channels=" << s.channels << "\n"
       << "samples=" << s.samples << "\n"
       << "n_classes=" << s.n_classes << "\n"
       << "hidden_dim=" << s.hidden_dim << "\n"
       << "cnn_blocks=" << s.cnn_blocks << "\n"
       << "kernel=" << s.kernel << "\n"
       << "input_instance_norm=" << (s.input_instance_norm ? 1 : 0) << "\n"
       << "block_norm=" << norm_kind_name(s.block_norm) << "\n"
       << "group_norm_groups=" << s.group_norm_groups << "\n"
       << "transformer_layers=" << s.transformer_layers << "\n"
       << "transformer_heads=" << s.transformer_heads << "\n"
       << "stft_n_fft=" << s.stft_n_fft << "\n"
       << "stft_hop=" << s.stft_hop << "\n"
       << "nonlinearity=" << s.nonlinearity << "\n";
    return os.str();
}

ModelSpec spec_from_text(const std::string& text, const std::string& path) {
    ModelSpec s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path + ": bad spec line '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        if (key == "arch") s.arch = arch_from_name(val);
        else if (key == "channels") s.channels = std::stoll(val);
        else if (key == "samples") s.samples = std::stoll(val);
        else if (key == "n_classes") s.n_classes = std::stoi(val);
        else if (key == "hidden_dim") s.hidden_dim = std::stoll(val);
        else if (key == "cnn_blocks") s.cnn_blocks = std::stoi(val);
        else if (key == "kernel") s.kernel = std::stoll(val);
        else if (key == "input_instance_norm") s.input_instance_norm = val == "1";
        else if (key == "block_norm") s.block_norm = norm_kind_from_name(val);
        else if (key == "group_norm_groups") s.group_norm_groups = std::stoll(val);
        else if (key == "transformer_layers") s.transformer_layers = std::stoi(val);
        else if (key == "transformer_heads") s.transformer_heads = std::stoi(val);
        else if (key == "stft_n_fft") s.stft_n_fft = std::stoll(val);
        else if (key == "stft_hop") s.stft_hop = std::stoll(val);
        else if (key == "nonlinearity") s.nonlinearity = val;
        else throw ParseError(path + ": unknown spec key '" + key + "'");
    }
    return s;
}

}  // namespace

void Model::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put_u32(out, kCkptVersion);
    put_string(out, spec_to_text(spec_));
    put_u32(out, std::uint32_t(params_.size()));
    for (size_t i = 0; i < params_.size(); ++i) {
        put_string(out, param_names_[i]);
        put_u32(out, std::uint32_t(params_[i].numel()));
        out.write(reinterpret_cast<const char*>(params_[i].array().data()),
                  std::streamsize(sizeof(float)) * params_[i].numel());
    }
    put_u32(out, std::uint32_t(bn_states_.size()));
    for (size_t i = 0; i < bn_states_.size(); ++i) {
        put_string(out, bn_names_[i]);
        put_u32(out, std::uint32_t(bn_states_[i].running_mean.size()));
        out.write(reinterpret_cast<const char*>(bn_states_[i].running_mean.data()),
                  std::streamsize(sizeof(float)) * bn_states_[i].running_mean.size());
        out.write(reinterpret_cast<const char*>(bn_states_[i].running_var.data()),
                  std::streamsize(sizeof(float)) * bn_states_[i].running_var.size());
    }
    out.write("END!", 4);
    if (!out) throw IoError("short write to " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[sizeof(kCkptMagic)];
    in.read(magic, sizeof(kCkptMagic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw ParseError(path + ": not a checkpoint file");
    }
    std::uint32_t version = get_u32(in, path);
    if (version != kCkptVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelSpec spec = spec_from_text(get_string(in, path), path);
    Model m = build(spec, 0);

    std::uint32_t n_params = get_u32(in, path);
    if (n_params != m.params_.size()) {
        throw ParseError(path + ": parameter count does not match spec");
    }
    for (size_t i = 0; i < m.params_.size(); ++i) {
        std::string name = get_string(in, path);
        if (name != m.param_names_[i]) {
            throw ParseError(path + ": parameter '" + name + "' does not match expected '" +
                             m.param_names_[i] + "'");
        }
        std::uint32_t n = get_u32(in, path);
        if (Index(n) != m.params_[i].numel()) {
            throw ParseError(path + ": size mismatch for parameter '" + name + "'");
        }
        in.read(reinterpret_cast<char*>(m.params_[i].array().data()),
                std::streamsize(sizeof(float)) * n);
        if (!in) throw ParseError(path + ": truncated checkpoint");
    }
    std::uint32_t n_bn = get_u32(in, path);
    if (n_bn != m.bn_states_.size()) {
        throw ParseError(path + ": batch-norm state count does not match spec");
    }
    for (size_t i = 0; i < m.bn_states_.size(); ++i) {
        std::string name = get_string(in, path);
        if (name != m.bn_names_[i]) throw ParseError(path + ": batch-norm name mismatch");
        std::uint32_t n = get_u32(in, path);
        if (Index(n) != m.bn_states_[i].running_mean.size()) {
            throw ParseError(path + ": batch-norm size mismatch");
        }
        in.read(reinterpret_cast<char*>(m.bn_states_[i].running_mean.data()),
                std::streamsize(sizeof(float)) * n);
        in.read(reinterpret_cast<char*>(m.bn_states_[i].running_var.data()),
                std::streamsize(sizeof(float)) * n);
        if (!in) throw ParseError(path + ": truncated checkpoint");
    }
    char end[4];
    in.read(end, 4);
    if (!in || std::memcmp(end, "END!", 4) != 0) {
        throw ParseError(path + ": missing end marker");
    }
    return m;
}

}  // namespace megdec
