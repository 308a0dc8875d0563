#pragma once

#include <torch/torch.h>

#include "sfseg/model.hpp"

namespace sfseg {

/// EMA-coupled teacher/student pair. Both sides must share one architecture;
/// the teacher's parameters only ever change through ema_update.
struct TeacherStudentPair {
    Model teacher;
    Model student;
    double ema_rate = 0.99;

    /// Builds the pair by cloning `init` twice and freezing the teacher.
    static TeacherStudentPair init_from(const Model& init, double ema_rate);
};

/// teacher <- ema_rate * teacher + (1 - ema_rate) * student, parameter-wise.
/// The student is untouched. Call once per optimizer step.
void ema_update(TeacherStudentPair& pair);

/// Mean squared difference between teacher and student latent features.
torch::Tensor aug_consistency_loss(const torch::Tensor& teacher_latent,
                                   const torch::Tensor& student_latent);

}  // namespace sfseg
