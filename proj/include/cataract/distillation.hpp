#pragma once

#include <string_view>

#include <torch/types.h>

#include "cataract/training.hpp"

namespace cataract::distillation {

/// Which way the KL term points. teacher_to_student is
/// KL(softmax(z_t/T) || softmax(z_s/T)), the usual distillation target.
enum class KlDirection { teacher_to_student, student_to_teacher };

std::string_view to_string(KlDirection d);
/// Throws ConfigError.
KlDirection parse_kl_direction(std::string_view name);

struct KDConfig {
    double temperature = 2.0;
    double alpha = 0.7;
    KlDirection kl_direction = KlDirection::teacher_to_student;
    /// Smoothing inside the hard-label cross-entropy term.
    double hard_label_smoothing = 0.1;

    /// Throws ParameterError.
    void validate() const;
};

/// alpha * KL * T^2 + (1 - alpha) * CE(z_s, y), batch-averaged.
/// Throws ParameterError (T <= 0, alpha outside [0,1]), ShapeError,
/// NumericError (non-finite logits).
torch::Tensor kd_loss(const torch::Tensor& student_logits, const torch::Tensor& teacher_logits,
                      const torch::Tensor& labels, const KDConfig& config);

/// Trains `student` against the frozen `teacher` (eval mode, no gradients)
/// with the usual scheduler, early stopping and checkpointing. The teacher
/// sees exactly the augmented batch the student sees.
training::TrainResult distill_train(models::ModelHandle& teacher, models::ModelHandle& student,
                                    const training::ImageDataset& train_set, const training::ImageDataset& val_set,
                                    const KDConfig& kd, const training::TrainConfig& config,
                                    training::TrainHooks hooks = {});

} // namespace cataract::distillation
