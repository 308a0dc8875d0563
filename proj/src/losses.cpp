#include "sfseg/losses.hpp"

#include <sstream>

namespace sfseg {
namespace {

void check_prob_range(const torch::Tensor& pred) {
    const double lo = pred.min().item<double>();
    const double hi = pred.max().item<double>();
    if (lo < -1e-6 || hi > 1.0 + 1e-6) {
        std::ostringstream os;
        os << "prediction values outside [0,1]: min=" << lo << " max=" << hi;
        throw ShapeError(os.str());
    }
}

torch::Tensor clamp_probs(const torch::Tensor& p) {
    return p.clamp(kProbEps, 1.0 - kProbEps);
}

// Soft Dice over everything but dim 0 when batched; whole tensor otherwise.
torch::Tensor soft_dice(const torch::Tensor& pred, const torch::Tensor& target) {
    torch::Tensor p = pred, t = target;
    if (p.dim() < 3) {
        p = p.reshape({1, -1});
        t = t.reshape({1, -1});
    } else {
        p = p.reshape({p.size(0), -1});
        t = t.reshape({t.size(0), -1});
    }
    auto inter = (p * t).sum(1);
    auto denom = p.sum(1) + t.sum(1);
    return (2.0 * inter + kDiceSmooth) / (denom + kDiceSmooth);
}

}  // namespace

torch::Tensor seg_loss(const torch::Tensor& pred, const torch::Tensor& target,
                       int num_classes) {
    check_prob_range(pred);
    if (num_classes <= 1) {
        if (pred.sizes() != target.sizes())
            throw ShapeError("seg_loss shape mismatch between pred and target");
        auto t = target.to(pred.dtype());
        auto pc = clamp_probs(pred);
        auto bce = -(t * pc.log() + (1.0 - t) * (1.0 - pc).log()).mean();
        auto dice = soft_dice(pred, t).mean();
        return 0.5 * bce + (1.0 - dice);
    }

    if (pred.dim() < 2 || pred.size(1) != num_classes)
        throw ShapeError("multi-class seg_loss expects (B,C,spatial...) pred");
    auto idx = target.to(torch::kLong);
    if (idx.dim() != pred.dim() - 1)
        throw ShapeError("multi-class seg_loss expects (B,spatial...) class map target");
    auto pc = clamp_probs(pred);
    auto ce = -pc.log().gather(1, idx.unsqueeze(1)).mean();

    std::vector<torch::Tensor> dices;
    for (int c = 1; c < num_classes; ++c) {
        auto onehot = (idx == c).to(pred.dtype());
        dices.push_back(soft_dice(pred.select(1, c), onehot).mean());
    }
    auto dice = torch::stack(dices).mean();
    return 0.5 * ce + (1.0 - dice);
}

torch::Tensor entropy_map(const torch::Tensor& probs, int num_classes) {
    if (num_classes <= 1) {
        auto p = clamp_probs(probs);
        return -(p * p.log() + (1.0 - p) * (1.0 - p).log());
    }
    if (probs.dim() < 2 || probs.size(1) != num_classes)
        throw ShapeError("multi-class entropy_map expects (B,C,spatial...) probs");
    auto p = clamp_probs(probs);
    return -(p * p.log()).sum(1);
}

torch::Tensor ensemble_entropy_loss(const torch::Tensor& h_orig,
                                    const std::vector<torch::Tensor>& h_augs) {
    if (h_augs.empty())
        throw ConfigError("ensemble_entropy_loss requires at least one augmented map (M >= 1)");
    for (const auto& h : h_augs)
        if (h.sizes() != h_orig.sizes())
            throw ShapeError("ensemble_entropy_loss maps must share one shape");
    auto loss = h_orig.mean();
    torch::Tensor aug_sum = h_augs[0].mean();
    for (size_t j = 1; j < h_augs.size(); ++j) aug_sum = aug_sum + h_augs[j].mean();
    return loss + aug_sum / static_cast<double>(h_augs.size());
}

}  // namespace sfseg
