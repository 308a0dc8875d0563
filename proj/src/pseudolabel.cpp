#include "sfseg/pseudolabel.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sfseg/adapt.hpp"
#include "sfseg/losses.hpp"

namespace sfseg {

torch::Tensor fuse_entropy(const torch::Tensor& h_orig,
                           const std::vector<torch::Tensor>& h_augs, double alpha,
                           double delta) {
    if (h_augs.empty()) throw ConfigError("fuse_entropy requires at least one augmented map");
    for (const auto& h : h_augs)
        if (h.sizes() != h_orig.sizes())
            throw ShapeError("fuse_entropy maps must share one shape");

    std::vector<torch::Tensor> kept;
    for (const auto& h : h_augs)
        if (h.mean().item<double>() >= delta) kept.push_back(h);
    if (kept.empty()) kept = h_augs;

    torch::Tensor h_aug = kept[0];
    for (size_t j = 1; j < kept.size(); ++j) h_aug = h_aug + kept[j];
    h_aug = h_aug / static_cast<double>(kept.size());

    auto pre = alpha * h_orig + (1.0 - alpha) * h_aug;
    const auto lo = pre.min();
    const auto hi = pre.max();
    const double span = (hi - lo).item<double>();
    if (span <= 0.0) return torch::zeros_like(pre);
    return (pre - lo) / (hi - lo);
}

torch::Tensor selective_mask(const torch::Tensor& h_fused) {
    return (h_fused >= 0.5).to(h_fused.dtype());
}

torch::Tensor fn_mask(const torch::Tensor& pred, double lambda1, double lambda2) {
    if (!(lambda1 < lambda2))
        throw ConfigError("fn_mask requires lambda1 < lambda2");
    return ((pred > lambda1) & (pred < lambda2)).to(pred.dtype());
}

torch::Tensor enhance(const torch::Tensor& pred_bin, const torch::Tensor& z,
                      const torch::Tensor& u) {
    if (pred_bin.sizes() != z.sizes() || z.sizes() != u.sizes())
        throw ShapeError("enhance masks must share one shape");
    return torch::maximum(pred_bin, z * u);
}

namespace {

// Per-sample, per-class pipeline over a batch of probability maps. `probs`
// holds the one-vs-rest probability channels (B, K, spatial...); entropy maps
// are binary entropies of those channels.
struct PerClassMaps {
    torch::Tensor fused;     // (B, K, spatial...)
    torch::Tensor selective;
    torch::Tensor fn;
    torch::Tensor enhanced;
};

PerClassMaps run_pipeline(const torch::Tensor& probs,
                          const std::vector<torch::Tensor>& aug_probs,
                          const SelectiveVoteConfig& cfg) {
    auto h0 = entropy_map(probs, 1);
    std::vector<torch::Tensor> haug;
    haug.reserve(aug_probs.size());
    for (const auto& p : aug_probs) haug.push_back(entropy_map(p, 1));

    const auto batch = probs.size(0);
    const auto k = probs.size(1);
    auto fused = torch::empty_like(probs);
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < k; ++c) {
            std::vector<torch::Tensor> per_class;
            per_class.reserve(haug.size());
            for (const auto& h : haug) per_class.push_back(h[b][c]);
            fused[b][c] = fuse_entropy(h0[b][c], per_class, cfg.alpha, cfg.delta);
        }
    }
    auto z = selective_mask(fused);
    auto u = fn_mask(probs, cfg.lambda1, cfg.lambda2);
    auto pred_bin = (probs >= cfg.binarize_threshold).to(probs.dtype());
    auto enhanced = enhance(pred_bin, z, u);
    return {fused, z, u, enhanced};
}

}  // namespace

PseudoLabelBundle generate_bundle(Model& source, const torch::Tensor& batch,
                                  const std::vector<AugSpec>& ensemble_specs,
                                  const SelectiveVoteConfig& cfg, std::mt19937& rng) {
    cfg.validate();
    if (ensemble_specs.empty())
        throw ConfigError("generate_bundle requires a non-empty augmentation ensemble");

    torch::NoGradGuard no_grad;
    source.eval();

    // Augment per sample, then run the source model on each stacked ensemble batch.
    std::vector<std::vector<torch::Tensor>> per_sample(static_cast<size_t>(batch.size(0)));
    for (std::int64_t b = 0; b < batch.size(0); ++b)
        per_sample[static_cast<size_t>(b)] = ensemble_augment(batch[b], ensemble_specs, rng);

    PseudoLabelBundle bundle;
    bundle.base_pred = forward(source, batch).probs;
    for (size_t j = 0; j < ensemble_specs.size(); ++j) {
        std::vector<torch::Tensor> stacked;
        stacked.reserve(per_sample.size());
        for (const auto& imgs : per_sample) stacked.push_back(imgs[j]);
        bundle.aug_inputs.push_back(torch::stack(stacked));
        bundle.aug_preds.push_back(forward(source, bundle.aug_inputs.back()).probs);
    }

    const int classes = source.arch.out_classes;
    if (classes == 1) {
        auto maps = run_pipeline(bundle.base_pred, bundle.aug_preds, cfg);
        bundle.fused_entropy = maps.fused;
        bundle.selective_mask = maps.selective;
        bundle.fn_mask = maps.fn;
        bundle.enhanced = maps.enhanced;
        bundle.enhanced_label = maps.enhanced;
        return bundle;
    }

    // One-vs-rest over the foreground classes; the enhanced class map keeps the
    // argmax label and fills background pixels claimed by some class's Z&U vote
    // with the highest-probability claimant.
    auto fg_probs = bundle.base_pred.narrow(1, 1, classes - 1);
    std::vector<torch::Tensor> fg_aug;
    fg_aug.reserve(bundle.aug_preds.size());
    for (const auto& p : bundle.aug_preds) fg_aug.push_back(p.narrow(1, 1, classes - 1));
    auto maps = run_pipeline(fg_probs, fg_aug, cfg);
    bundle.fused_entropy = maps.fused;
    bundle.selective_mask = maps.selective;
    bundle.fn_mask = maps.fn;
    bundle.enhanced = maps.enhanced;

    auto label = bundle.base_pred.argmax(1);  // (B, spatial...)
    auto vote = maps.selective * maps.fn;     // (B, K, spatial...)
    auto claimed = vote.sum(1) > 0;
    auto masked_probs = torch::where(vote > 0, fg_probs,
                                     torch::full_like(fg_probs, -1.0));
    auto claimant = masked_probs.argmax(1) + 1;
    bundle.enhanced_label = torch::where(claimed & (label == 0), claimant, label);
    return bundle;
}

namespace {

cv::Mat to_gray_u8(const torch::Tensor& map) {
    auto m = map.to(torch::kFloat32).contiguous();
    cv::Mat f(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_32F,
              m.data_ptr<float>());
    cv::Mat u8;
    f.convertTo(u8, CV_8U, 255.0);
    return u8.clone();
}

// Flattens a (K, spatial...) bundle field to a displayable 2D map: first
// channel, middle depth slice for volumes.
torch::Tensor display_slice(const torch::Tensor& t) {
    auto m = t;
    while (m.dim() > 2) m = m.size(0) == 1 ? m.squeeze(0) : m[m.size(0) / 2];
    return m;
}

// Side-by-side montage of prediction, fused entropy, Z, U and enhanced label.
void dump_sample(const PseudoLabelBundle& bundle, std::int64_t b, const std::string& id,
                 const std::filesystem::path& dir) {
    std::vector<cv::Mat> panels = {
        to_gray_u8(display_slice(bundle.base_pred[b])),
        to_gray_u8(display_slice(bundle.fused_entropy[b])),
        to_gray_u8(display_slice(bundle.selective_mask[b])),
        to_gray_u8(display_slice(bundle.fn_mask[b])),
        to_gray_u8(display_slice(bundle.enhanced[b])),
    };
    cv::Mat montage;
    cv::hconcat(panels, montage);
    cv::imwrite((dir / (id + "_stage1.png")).string(), montage);
}

}  // namespace

Model adapt_stage1(const Model& source, const UnlabeledView& target,
                   const Stage1Settings& settings) {
    if (target.empty()) throw DataError("adapt_stage1 requires a non-empty target dataset");
    settings.voting.validate();
    if (settings.ensemble.empty())
        throw ConfigError("adapt_stage1 requires a non-empty augmentation ensemble");
    if (settings.dump_dir) std::filesystem::create_directories(*settings.dump_dir);

    Model frozen = source.clone();
    frozen.set_requires_grad(false);
    Model model = source.clone();
    model.set_requires_grad(true);

    torch::optim::Adam optimizer(
        model.net->parameters(),
        torch::optim::AdamOptions(settings.optimizer.lr)
            .betas({settings.optimizer.momentum, 0.999}));
    std::mt19937 rng(static_cast<std::mt19937::result_type>(settings.seed));
    const int classes = model.arch.out_classes;

    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        auto order = target.shuffled_indices(settings.seed + static_cast<std::uint64_t>(epoch));
        for (std::size_t first = 0; first < order.size();
             first += static_cast<std::size_t>(settings.batch_size)) {
            const auto last =
                std::min(order.size(), first + static_cast<std::size_t>(settings.batch_size));
            auto batch = stack_images(target, order, first, last);

            auto bundle =
                generate_bundle(frozen, batch, settings.ensemble, settings.voting, rng);
            if (settings.dump_dir && epoch == 0)
                for (std::size_t i = first; i < last; ++i)
                    dump_sample(bundle, static_cast<std::int64_t>(i - first),
                                target.sample_id(order[i]), *settings.dump_dir);

            model.train();
            auto pred = forward(model, batch).probs;
            std::vector<torch::Tensor> aug_entropies;
            aug_entropies.reserve(bundle.aug_inputs.size());
            for (const auto& aug_batch : bundle.aug_inputs)
                aug_entropies.push_back(
                    entropy_map(forward(model, aug_batch).probs, classes));

            auto target_label = classes == 1 ? bundle.enhanced_label.detach()
                                             : bundle.enhanced_label;
            auto loss = seg_loss(pred, target_label, classes) +
                        ensemble_entropy_loss(entropy_map(pred, classes), aug_entropies);
            const double loss_value = loss.item<double>();
            if (!std::isfinite(loss_value))
                throw TrainingError("non-finite stage-1 loss at epoch " +
                                    std::to_string(epoch) + ", batch offset " +
                                    std::to_string(first));

            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
            model.step_count += 1;
        }
    }
    model.eval();
    return model;
}

}  // namespace sfseg
