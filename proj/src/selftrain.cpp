#include "sfseg/selftrain.hpp"

#include <cmath>

#include "sfseg/adapt.hpp"
#include "sfseg/losses.hpp"

namespace sfseg {

TeacherStudentPair TeacherStudentPair::init_from(const Model& init, double ema_rate) {
    if (ema_rate < 0.0 || ema_rate > 1.0)
        throw ConfigError("ema_rate must be in [0,1]");
    TeacherStudentPair pair;
    pair.teacher = init.clone();
    pair.student = init.clone();
    pair.ema_rate = ema_rate;
    pair.teacher.set_requires_grad(false);
    return pair;
}

void ema_update(TeacherStudentPair& pair) {
    if (!(pair.teacher.arch == pair.student.arch))
        throw ShapeError("ema_update requires teacher and student with equal arch");
    torch::NoGradGuard guard;
    auto t = pair.teacher.net->parameters();
    auto s = pair.student.net->parameters();
    for (size_t i = 0; i < t.size(); ++i)
        t[i].mul_(pair.ema_rate).add_(s[i], 1.0 - pair.ema_rate);
}

torch::Tensor aug_consistency_loss(const torch::Tensor& teacher_latent,
                                   const torch::Tensor& student_latent) {
    if (teacher_latent.sizes() != student_latent.sizes())
        throw ShapeError("aug_consistency_loss latent shapes must match");
    auto diff = teacher_latent - student_latent;
    return (diff * diff).mean();
}

Model adapt_stage2(const Model& init, const UnlabeledView& target,
                   const Stage2Settings& settings) {
    if (target.empty()) throw DataError("adapt_stage2 requires a non-empty target dataset");
    if (settings.strong.empty() || settings.weak.empty())
        throw ConfigError("adapt_stage2 requires non-empty strong and weak tiers");

    auto pair = TeacherStudentPair::init_from(init, settings.ema_rate);
    torch::optim::Adam optimizer(
        pair.student.net->parameters(),
        torch::optim::AdamOptions(settings.optimizer.lr)
            .betas({settings.optimizer.momentum, 0.999}));
    std::mt19937 rng(static_cast<std::mt19937::result_type>(settings.seed ^
                                                            0x5f3759df9e3779b9ULL));
    const int classes = init.arch.out_classes;

    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        auto order = target.shuffled_indices(settings.seed + 31ULL +
                                             static_cast<std::uint64_t>(epoch));
        for (std::size_t first = 0; first < order.size();
             first += static_cast<std::size_t>(settings.batch_size)) {
            const auto last =
                std::min(order.size(), first + static_cast<std::size_t>(settings.batch_size));
            auto batch = stack_images(target, order, first, last);

            std::vector<torch::Tensor> strong_imgs, weak_imgs;
            for (std::int64_t b = 0; b < batch.size(0); ++b) {
                strong_imgs.push_back(apply_tier(settings.strong, batch[b], rng));
                weak_imgs.push_back(apply_tier(settings.weak, batch[b], rng));
            }
            auto strong_batch = torch::stack(strong_imgs);
            auto weak_batch = torch::stack(weak_imgs);
            auto& teacher_in = settings.swap_aug_routing ? weak_batch : strong_batch;
            auto& student_in = settings.swap_aug_routing ? strong_batch : weak_batch;

            torch::Tensor pseudo, teacher_latent;
            {
                torch::NoGradGuard no_grad;
                pair.teacher.eval();
                auto out = forward(pair.teacher, teacher_in);
                teacher_latent = out.latent;
                pseudo = classes == 1 ? (out.probs >= 0.5).to(out.probs.dtype())
                                      : out.probs.argmax(1);
            }
            pair.student.train();
            auto student_out = forward(pair.student, student_in);
            auto loss = seg_loss(student_out.probs, pseudo, classes) +
                        aug_consistency_loss(teacher_latent, student_out.latent);
            const double loss_value = loss.item<double>();
            if (!std::isfinite(loss_value))
                throw TrainingError("non-finite stage-2 loss at epoch " +
                                    std::to_string(epoch) + ", batch offset " +
                                    std::to_string(first));

            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
            pair.student.step_count += 1;
            ema_update(pair);
            pair.teacher.step_count += 1;
        }
    }
    pair.teacher.eval();
    return std::move(pair.teacher);
}

}  // namespace sfseg
