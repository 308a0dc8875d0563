#include "sfseg/model.hpp"

#include <sstream>

namespace sfseg {
namespace {

namespace F = torch::nn::functional;

int channels_at(const ArchSpec& spec, int level) {
    return spec.base_width << level;
}

}  // namespace

SegNetImpl::SegNetImpl(ArchSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    int in_ch = spec_.in_channels;
    for (int level = 0; level < spec_.levels; ++level) {
        int out_ch = channels_at(spec_, level);
        enc_.push_back(make_block(in_ch, out_ch));
        register_module("enc" + std::to_string(level), enc_.back());
        in_ch = out_ch;
    }
    for (int level = 0; level < spec_.levels - 1; ++level) {
        // Input is the upsampled deeper map concatenated with the skip.
        int skip_ch = channels_at(spec_, level);
        int deep_ch = channels_at(spec_, level + 1);
        dec_.push_back(make_block(skip_ch + deep_ch, skip_ch));
        register_module("dec" + std::to_string(level), dec_.back());
    }
    head_ = torch::nn::Sequential();
    if (spec_.dims == 2) {
        head_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(spec_.base_width, spec_.out_classes, 1)));
    } else {
        head_->push_back(torch::nn::Conv3d(
            torch::nn::Conv3dOptions(spec_.base_width, spec_.out_classes, 1)));
    }
    register_module("head", head_);
}

torch::nn::Sequential SegNetImpl::make_block(int in_ch, int out_ch) {
    torch::nn::Sequential block;
    for (int i = 0; i < spec_.convs_per_block; ++i) {
        int ic = i == 0 ? in_ch : out_ch;
        if (spec_.dims == 2) {
            block->push_back(torch::nn::Conv2d(
                torch::nn::Conv2dOptions(ic, out_ch, 3).padding(1)));
            if (spec_.instance_norm)
                block->push_back(torch::nn::InstanceNorm2d(
                    torch::nn::InstanceNorm2dOptions(out_ch)));
        } else {
            block->push_back(torch::nn::Conv3d(
                torch::nn::Conv3dOptions(ic, out_ch, 3).padding(1)));
            if (spec_.instance_norm)
                block->push_back(torch::nn::InstanceNorm3d(
                    torch::nn::InstanceNorm3dOptions(out_ch)));
        }
        block->push_back(torch::nn::ReLU(torch::nn::ReLUOptions().inplace(true)));
    }
    return block;
}

torch::Tensor SegNetImpl::pool(const torch::Tensor& x) const {
    if (spec_.dims == 2) return F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    return F::max_pool3d(x, F::MaxPool3dFuncOptions(2));
}

torch::Tensor SegNetImpl::upsample(const torch::Tensor& x) const {
    auto opts = F::InterpolateFuncOptions().scale_factor(
        std::vector<double>(spec_.dims, 2.0)).align_corners(false);
    if (spec_.dims == 2) opts = opts.mode(torch::kBilinear);
    else opts = opts.mode(torch::kTrilinear);
    return F::interpolate(x, opts);
}

ForwardOut SegNetImpl::forward(const torch::Tensor& input) {
    std::vector<torch::Tensor> skips;
    torch::Tensor x = input;
    for (int level = 0; level < spec_.levels; ++level) {
        x = enc_[static_cast<size_t>(level)]->forward(x);
        if (level < spec_.levels - 1) {
            skips.push_back(x);
            x = pool(x);
        }
    }
    torch::Tensor latent = x;
    for (int level = spec_.levels - 2; level >= 0; --level) {
        x = upsample(x);
        x = torch::cat({x, skips[static_cast<size_t>(level)]}, 1);
        x = dec_[static_cast<size_t>(level)]->forward(x);
    }
    x = head_->forward(x);
    torch::Tensor probs = spec_.out_classes == 1 ? torch::sigmoid(x)
                                                 : torch::softmax(x, 1);
    return {probs, latent};
}

Model build_model(const ArchSpec& spec, std::uint64_t seed) {
    spec.validate();
    torch::manual_seed(seed);
    Model m;
    m.arch = spec;
    m.net = SegNet(spec);
    m.net->eval();
    return m;
}

Model Model::clone() const {
    Model copy;
    copy.arch = arch;
    copy.net = SegNet(arch);
    copy.step_count = step_count;
    torch::NoGradGuard guard;
    auto dst = copy.net->parameters();
    auto src = net->parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
    auto dbuf = copy.net->buffers();
    auto sbuf = net->buffers();
    for (size_t i = 0; i < sbuf.size(); ++i) dbuf[i].copy_(sbuf[i]);
    copy.net->eval();
    return copy;
}

std::vector<std::pair<std::string, torch::Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : net->named_parameters())
        out.emplace_back(p.key(), p.value());
    return out;
}

void Model::set_requires_grad(bool enabled) {
    for (auto& p : net->parameters()) p.set_requires_grad(enabled);
}

ForwardOut forward(Model& model, const torch::Tensor& batch) {
    const auto& spec = model.arch;
    if (batch.dim() != spec.dims + 2) {
        std::ostringstream os;
        os << "expected " << spec.dims + 2 << "-d batch (B,C,spatial...) for dims="
           << spec.dims << ", got " << batch.dim() << "-d";
        throw ShapeError(os.str());
    }
    const int factor = spec.downsample_factor();
    for (int axis = 2; axis < batch.dim(); ++axis) {
        if (batch.size(axis) % factor != 0) {
            std::ostringstream os;
            os << "spatial axis " << axis - 2 << " has extent " << batch.size(axis)
               << ", not divisible by " << factor;
            throw ShapeError(os.str());
        }
    }
    if (batch.size(1) != spec.in_channels) {
        std::ostringstream os;
        os << "expected " << spec.in_channels << " input channels, got " << batch.size(1);
        throw ShapeError(os.str());
    }
    return model.net->forward(batch);
}

std::int64_t parameter_count(const Model& model) {
    std::int64_t n = 0;
    for (const auto& p : model.net->parameters()) n += p.numel();
    return n;
}

}  // namespace sfseg
