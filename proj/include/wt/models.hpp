#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wt/error.hpp"
#include "wt/ops.hpp"
#include "wt/param_store.hpp"
#include "wt/rng.hpp"

namespace wt {

enum class ArchId { meso_lite, cnn5_desk, resnet_mini };

inline const char* to_string(ArchId arch) {
    switch (arch) {
        case ArchId::meso_lite: return "meso_lite";
        case ArchId::cnn5_desk: return "cnn5_desk";
        case ArchId::resnet_mini: return "resnet_mini";
    }
    return "unknown";
}

inline ArchId parse_arch(std::string_view name) {
    if (name == "meso_lite") return ArchId::meso_lite;
    if (name == "cnn5_desk") return ArchId::cnn5_desk;
    if (name == "resnet_mini") return ArchId::resnet_mini;
    fail(ErrorKind::invalid_argument, "unknown architecture '" + std::string(name) + "'");
}

struct InputShape {
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 64;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct ArchSpec {
    ArchId arch = ArchId::cnn5_desk;
    InputShape input;
    std::size_t num_classes = 2;
};

/// A tensor with a name, detached from any store. Used for snapshots and
/// for seeding a model with externally supplied initial values.
struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Activations recorded during a forward pass, keyed by layer name.
using FeatureMaps = std::map<std::string, Tensor>;

class Model {
   public:
    virtual ~Model() = default;

    const ArchSpec& spec() const noexcept { return spec_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    /// Logits [N, num_classes]. Prunable weights enter as `weight ⊙ mask`.
    /// In training mode batch-norm uses batch statistics and updates its
    /// running estimates; otherwise the running estimates are used.
    Tensor forward(const Tensor& batch, bool training, FeatureMaps* features = nullptr) {
        const auto& in = spec_.input;
        if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height ||
            batch.dim(3) != in.width) {
            fail(ErrorKind::shape, std::string(to_string(spec_.arch)) + " expects input [N, " +
                                       std::to_string(in.channels) + ", " + std::to_string(in.height) + ", " +
                                       std::to_string(in.width) + "], got " + to_string(batch.shape()));
        }
        return run(batch, training, features);
    }

    /// Convolutional activations that can be captured (Grad-CAM targets), in
    /// network order. The last entry is the default attribution layer.
    virtual std::vector<std::string> feature_layers() const = 0;

    /// Names of the non-convolutional layers (rejected as attribution targets).
    virtual std::vector<std::string> dense_layers() const = 0;

    std::unique_ptr<Model> clone() const {
        auto copy = copy_self();
        copy->params_ = params_.clone();
        return copy;
    }

   protected:
    explicit Model(ArchSpec spec) : spec_(spec) {}
    Model(const Model&) = default;

    virtual Tensor run(const Tensor& batch, bool training, FeatureMaps* features) = 0;
    virtual std::unique_ptr<Model> copy_self() const = 0;

    struct ConvLayer {
        std::size_t weight = 0;
        std::optional<std::size_t> bias;
        std::size_t stride = 1;
        std::size_t padding = 0;
    };

    struct BatchNormLayer {
        std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
    };

    struct LinearLayer {
        std::size_t weight = 0, bias = 0;
    };

    ConvLayer add_conv(Rng& rng, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                       std::size_t stride, bool with_bias) {
        Tensor w(Shape{out, in, kernel, kernel});
        kaiming_uniform(rng, w, in * kernel * kernel);
        ConvLayer layer;
        layer.weight = params_.add(name + ".weight", ParamRole::conv_weight, w);
        if (with_bias) layer.bias = params_.add(name + ".bias", ParamRole::bias, Tensor(Shape{out}));
        layer.stride = stride;
        layer.padding = kernel / 2;
        return layer;
    }

    BatchNormLayer add_batchnorm(const std::string& name, std::size_t channels) {
        BatchNormLayer bn;
        bn.gamma = params_.add(name + ".gamma", ParamRole::bn_gamma, Tensor(Shape{channels}, 1.0f));
        bn.beta = params_.add(name + ".beta", ParamRole::bn_beta, Tensor(Shape{channels}));
        bn.mean = params_.add(name + ".running_mean", ParamRole::bn_running_mean, Tensor(Shape{channels}));
        bn.var = params_.add(name + ".running_var", ParamRole::bn_running_var, Tensor(Shape{channels}, 1.0f));
        return bn;
    }

    LinearLayer add_linear(Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
        Tensor w(Shape{out, in});
        kaiming_uniform(rng, w, in);
        LinearLayer layer;
        layer.weight = params_.add(name + ".weight", ParamRole::linear_weight, w);
        layer.bias = params_.add(name + ".bias", ParamRole::bias, Tensor(Shape{out}));
        return layer;
    }

    Tensor effective(std::size_t index) const {
        const auto& e = params_.at(index);
        return e.prunable() ? apply_mask(e.value, std::span<const std::uint8_t>(e.mask)) : e.value;
    }

    Tensor conv(const ConvLayer& layer, const Tensor& x) const {
        Tensor bias = layer.bias ? params_.at(*layer.bias).value : Tensor();
        return conv2d(x, effective(layer.weight), bias, layer.stride, layer.padding);
    }

    Tensor norm(const BatchNormLayer& bn, const Tensor& x, bool training) const {
        return batchnorm2d(x, params_.at(bn.gamma).value, params_.at(bn.beta).value,
                           BatchNormStats<float>{params_.at(bn.mean).value, params_.at(bn.var).value}, training);
    }

    Tensor dense(const LinearLayer& layer, const Tensor& x) const {
        return linear(x, effective(layer.weight), params_.at(layer.bias).value);
    }

    static void capture(FeatureMaps* features, const std::string& name, const Tensor& t) {
        if (features) (*features)[name] = t;
    }

    /// Kaiming-uniform for ReLU fan-in: U(-b, b) with b = sqrt(6 / fan_in).
    static void kaiming_uniform(Rng& rng, const Tensor& w, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }

    ArchSpec spec_;
    ParamStore params_;
};

/// MesoNet-style detector: four conv/BN/pool blocks (3x3 then 5x5 kernels,
/// 8/8/16/16 filters) and a 16-unit leaky-ReLU MLP head.
class MesoLite final : public Model {
   public:
    MesoLite(ArchSpec spec, Rng& rng) : Model(spec) {
        const std::size_t c = spec.input.channels;
        const std::size_t widths[4] = {8, 8, 16, 16};
        const std::size_t kernels[4] = {3, 5, 5, 5};
        std::size_t in = c;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto name = "conv" + std::to_string(i + 1);
            convs_[i] = add_conv(rng, name, in, widths[i], kernels[i], 1, true);
            norms_[i] = add_batchnorm("bn" + std::to_string(i + 1), widths[i]);
            in = widths[i];
        }
        const std::size_t spatial = spec.input.height / 32;
        fc1_ = add_linear(rng, "fc1", 16 * spatial * spatial, 16);
        fc2_ = add_linear(rng, "fc2", 16, spec.num_classes);
    }

    std::vector<std::string> feature_layers() const override { return {"conv1", "conv2", "conv3", "conv4"}; }
    std::vector<std::string> dense_layers() const override { return {"fc1", "fc2"}; }

   private:
    Tensor run(const Tensor& batch, bool training, FeatureMaps* features) override {
        Tensor x = batch;
        for (std::size_t i = 0; i < 4; ++i) {
            x = relu(conv(convs_[i], x));
            x = norm(norms_[i], x, training);
            capture(features, "conv" + std::to_string(i + 1), x);
            const std::size_t pool = i == 3 ? 4 : 2;
            x = maxpool2d(x, pool, pool);
        }
        x = leaky_relu(dense(fc1_, flatten(x)), 0.1f);
        return dense(fc2_, x);
    }

    std::unique_ptr<Model> copy_self() const override { return std::unique_ptr<Model>(new MesoLite(*this)); }

    ConvLayer convs_[4];
    BatchNormLayer norms_[4];
    LinearLayer fc1_, fc2_;
};

/// Five conv/BN/ReLU layers (16/32/64/64/128), global average pool, linear head.
class Cnn5Desk final : public Model {
   public:
    Cnn5Desk(ArchSpec spec, Rng& rng) : Model(spec) {
        const std::size_t widths[5] = {16, 32, 64, 64, 128};
        std::size_t in = spec.input.channels;
        for (std::size_t i = 0; i < 5; ++i) {
            convs_[i] = add_conv(rng, "conv" + std::to_string(i + 1), in, widths[i], 3, i == 0 ? 2 : 1, false);
            norms_[i] = add_batchnorm("bn" + std::to_string(i + 1), widths[i]);
            in = widths[i];
        }
        fc_ = add_linear(rng, "fc", 128, spec.num_classes);
    }

    std::vector<std::string> feature_layers() const override {
        return {"conv1", "conv2", "conv3", "conv4", "conv5"};
    }
    std::vector<std::string> dense_layers() const override { return {"fc"}; }

   private:
    Tensor run(const Tensor& batch, bool training, FeatureMaps* features) override {
        Tensor x = batch;
        for (std::size_t i = 0; i < 5; ++i) {
            x = relu(norm(norms_[i], conv(convs_[i], x), training));
            capture(features, "conv" + std::to_string(i + 1), x);
            // conv1 is strided; pooling follows conv1..conv3.
            if (i < 3) x = maxpool2d(x, 2, 2);
        }
        return dense(fc_, global_avg_pool(x));
    }

    std::unique_ptr<Model> copy_self() const override { return std::unique_ptr<Model>(new Cnn5Desk(*this)); }

    ConvLayer convs_[5];
    BatchNormLayer norms_[5];
    LinearLayer fc_;
};

/// ResNet-18 pattern at desk scale: strided stem + max-pool, three stages of
/// two basic blocks (16/32/64 channels), stride-2 1x1 projection shortcuts
/// where the shape changes, global average pool, linear head.
class ResNetMini final : public Model {
   public:
    ResNetMini(ArchSpec spec, Rng& rng) : Model(spec) {
        stem_ = add_conv(rng, "stem.conv", spec.input.channels, 16, 3, 2, false);
        stem_bn_ = add_batchnorm("stem.bn", 16);
        const std::size_t widths[3] = {16, 32, 64};
        std::size_t in = 16;
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t b = 0; b < 2; ++b) {
                const auto prefix = block_name(s, b);
                const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
                Block block;
                block.conv1 = add_conv(rng, prefix + ".conv1", in, widths[s], 3, stride, false);
                block.bn1 = add_batchnorm(prefix + ".bn1", widths[s]);
                block.conv2 = add_conv(rng, prefix + ".conv2", widths[s], widths[s], 3, 1, false);
                block.bn2 = add_batchnorm(prefix + ".bn2", widths[s]);
                if (stride != 1 || in != widths[s]) {
                    block.downsample = add_conv(rng, prefix + ".downsample.conv", in, widths[s], 1, stride, false);
                    block.downsample_bn = add_batchnorm(prefix + ".downsample.bn", widths[s]);
                }
                blocks_.push_back(block);
                in = widths[s];
            }
        }
        fc_ = add_linear(rng, "fc", 64, spec.num_classes);
    }

    std::vector<std::string> feature_layers() const override {
        std::vector<std::string> names{"stem"};
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t b = 0; b < 2; ++b) names.push_back(block_name(s, b));
        }
        return names;
    }
    std::vector<std::string> dense_layers() const override { return {"fc"}; }

   private:
    struct Block {
        ConvLayer conv1, conv2;
        BatchNormLayer bn1, bn2;
        std::optional<ConvLayer> downsample;
        BatchNormLayer downsample_bn;
    };

    static std::string block_name(std::size_t stage, std::size_t block) {
        return "stage" + std::to_string(stage + 1) + "." + std::to_string(block);
    }

    Tensor run(const Tensor& batch, bool training, FeatureMaps* features) override {
        Tensor x = relu(norm(stem_bn_, conv(stem_, batch), training));
        capture(features, "stem", x);
        x = maxpool2d(x, 2, 2);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const auto& b = blocks_[i];
            Tensor branch = relu(norm(b.bn1, conv(b.conv1, x), training));
            branch = norm(b.bn2, conv(b.conv2, branch), training);
            Tensor shortcut = b.downsample ? norm(b.downsample_bn, conv(*b.downsample, x), training) : x;
            x = relu(add(branch, shortcut));
            capture(features, block_name(i / 2, i % 2), x);
        }
        return dense(fc_, global_avg_pool(x));
    }

    std::unique_ptr<Model> copy_self() const override { return std::unique_ptr<Model>(new ResNetMini(*this)); }

    ConvLayer stem_;
    BatchNormLayer stem_bn_;
    std::vector<Block> blocks_;
    LinearLayer fc_;
};

inline void check_input_shape(const ArchSpec& spec) {
    const auto& in = spec.input;
    const bool size_ok = in.height == in.width && (in.height == 32 || in.height == 64);
    const bool channels_ok = in.channels == 1 || in.channels == 3;
    if (!size_ok || !channels_ok) {
        fail(ErrorKind::invalid_argument, std::string(to_string(spec.arch)) + ": unsupported input shape (" +
                                              std::to_string(in.channels) + ", " + std::to_string(in.height) +
                                              ", " + std::to_string(in.width) +
                                              "); expected 1 or 3 channels at 32x32 or 64x64");
    }
    if (spec.num_classes != 2) fail(ErrorKind::invalid_argument, "only binary classifiers are supported");
}

/// Builds an architecture with Kaiming-uniform weights drawn from `seed`.
/// When `initial` is non-empty its values replace the drawn ones (by name,
/// shapes must match) before the initial snapshot is taken.
inline std::unique_ptr<Model> build_model(const ArchSpec& spec, std::uint64_t seed,
                                          std::span<const NamedTensor> initial = {}) {
    check_input_shape(spec);
    Rng rng(mix_seed(seed, 0x1417));
    std::unique_ptr<Model> model;
    switch (spec.arch) {
        case ArchId::meso_lite: model = std::make_unique<MesoLite>(spec, rng); break;
        case ArchId::cnn5_desk: model = std::make_unique<Cnn5Desk>(spec, rng); break;
        case ArchId::resnet_mini: model = std::make_unique<ResNetMini>(spec, rng); break;
    }
    auto& store = model->params();
    for (const auto& t : initial) {
        auto& e = store.get(t.name);
        if (e.value.shape() != t.shape) {
            fail(ErrorKind::shape, "initial value for '" + t.name + "' has shape " + to_string(t.shape) +
                                       ", model expects " + to_string(e.value.shape()));
        }
        std::copy(t.values.begin(), t.values.end(), e.value.data().begin());
    }
    store.seal();
    return model;
}

struct LayerCensus {
    std::string name;
    std::size_t total = 0;
    std::size_t unpruned = 0;
};

struct Census {
    std::vector<LayerCensus> layers;
    std::size_t prunable_total = 0;
    std::size_t prunable_unpruned = 0;
    std::size_t trainable_total = 0;  // every trainable scalar, prunable or not
    double sparsity = 0.0;
};

inline Census param_census(const ParamStore& store) {
    Census c;
    for (const auto& e : store.entries()) {
        if (e.trainable()) c.trainable_total += e.value.numel();
        if (!e.prunable()) continue;
        LayerCensus layer{e.name, e.value.numel(), e.unpruned()};
        c.prunable_total += layer.total;
        c.prunable_unpruned += layer.unpruned;
        c.layers.push_back(std::move(layer));
    }
    c.sparsity = c.prunable_total == 0
                     ? 0.0
                     : 1.0 - static_cast<double>(c.prunable_unpruned) / static_cast<double>(c.prunable_total);
    return c;
}

}  // namespace wt
