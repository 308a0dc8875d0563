#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "sfseg/arch.hpp"

namespace sfseg {

/// Forward result: per-element probabilities plus the deepest encoder features.
struct ForwardOut {
    torch::Tensor probs;   // (B, C_out, spatial...), values in [0,1]
    torch::Tensor latent;  // (B, C_latent, spatial / 2^(levels-1))
};

/// UNet-style encoder-decoder, 2D or 3D depending on ArchSpec::dims.
///
/// Encoder blocks are conv(3)-ReLU stacks followed by max-pooling; decoder
/// blocks upsample (bilinear / trilinear), concatenate the skip connection and
/// apply the same conv stack. Head is a 1x1(x1) conv with sigmoid for one
/// output class, softmax over channels otherwise.
class SegNetImpl : public torch::nn::Module {
public:
    explicit SegNetImpl(ArchSpec spec);

    ForwardOut forward(const torch::Tensor& input);

    const ArchSpec& spec() const { return spec_; }

private:
    torch::nn::Sequential make_block(int in_ch, int out_ch);
    torch::Tensor pool(const torch::Tensor& x) const;
    torch::Tensor upsample(const torch::Tensor& x) const;

    ArchSpec spec_;
    std::vector<torch::nn::Sequential> enc_;
    std::vector<torch::nn::Sequential> dec_;
    torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(SegNet);

/// A segmentation network together with its architecture descriptor and the
/// number of optimizer steps it has absorbed. Copyable via clone().
struct Model {
    ArchSpec arch;
    SegNet net{nullptr};
    std::int64_t step_count = 0;

    /// Deep copy; parameters are cloned, not aliased.
    Model clone() const;

    /// Ordered (name, tensor) view of all parameters.
    std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;

    void set_requires_grad(bool enabled);
    void train(bool on = true) { net->train(on); }
    void eval() { net->eval(); }
};

/// Deterministically builds a model for (spec, seed).
Model build_model(const ArchSpec& spec, std::uint64_t seed);

/// Runs the network; checks spatial divisibility by 2^(levels-1).
ForwardOut forward(Model& model, const torch::Tensor& batch);

/// Total number of learnable scalars.
std::int64_t parameter_count(const Model& model);

}  // namespace sfseg
