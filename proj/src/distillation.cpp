#include "cataract/distillation.hpp"

#include <cmath>

#include <torch/torch.h>

#include "cataract/errors.hpp"

namespace cataract::distillation {

std::string_view to_string(KlDirection d) {
    return d == KlDirection::teacher_to_student ? "teacher_to_student" : "student_to_teacher";
}

KlDirection parse_kl_direction(std::string_view name) {
    if (name == "teacher_to_student") {
        return KlDirection::teacher_to_student;
    }
    if (name == "student_to_teacher") {
        return KlDirection::student_to_teacher;
    }
    throw ConfigError("unknown kl_direction '" + std::string(name) +
                      "' (expected teacher_to_student or student_to_teacher)");
}

void KDConfig::validate() const {
    if (!(temperature > 0) || !std::isfinite(temperature)) {
        throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
    }
    if (!(alpha >= 0 && alpha <= 1)) {
        throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(hard_label_smoothing >= 0 && hard_label_smoothing < 1)) {
        throw ParameterError("hard_label_smoothing must lie in [0, 1)");
    }
}

torch::Tensor kd_loss(const torch::Tensor& zs, const torch::Tensor& zt, const torch::Tensor& labels,
                      const KDConfig& config) {
    config.validate();
    if (zs.dim() != 2 || zs.sizes() != zt.sizes()) {
        throw ShapeError("student and teacher logits must share an N x C shape");
    }
    if (!torch::isfinite(zt).all().item<bool>()) {
        throw NumericError("non-finite teacher logits");
    }
    const double T = config.temperature;
    const auto log_s = torch::log_softmax(zs / T, 1);
    const auto log_t = torch::log_softmax(zt.to(zs.dtype()) / T, 1);
    const auto kl = config.kl_direction == KlDirection::teacher_to_student
                        ? (log_t.exp() * (log_t - log_s)).sum(1).mean()
                        : (log_s.exp() * (log_s - log_t)).sum(1).mean();
    // cross_entropy checks the student logits for non-finite values.
    const auto ce = training::cross_entropy(zs, labels, config.hard_label_smoothing);
    return config.alpha * (kl * (T * T)) + (1.0 - config.alpha) * ce;
}

training::TrainResult distill_train(models::ModelHandle& teacher, models::ModelHandle& student,
                                    const training::ImageDataset& train_set, const training::ImageDataset& val_set,
                                    const KDConfig& kd, const training::TrainConfig& config,
                                    training::TrainHooks hooks) {
    kd.validate();
    if (teacher.is_dual() != student.is_dual()) {
        throw InputError("teacher and student must both be single-eye or both dual-eye");
    }
    if (teacher.spec.num_classes != student.spec.num_classes) {
        throw LoadError("teacher head has " + std::to_string(teacher.spec.num_classes) + " classes, student " +
                        std::to_string(student.spec.num_classes));
    }
    const bool teacher_was_training = teacher.module->is_training();
    teacher.module->eval();
    hooks.loss = [&](const torch::Tensor& logits, const training::Batch& b) {
        torch::Tensor zt;
        {
            torch::NoGradGuard no_grad;
            zt = teacher.module->logits(b.left, b.right);
        }
        return kd_loss(logits, zt, b.labels, kd);
    };
    auto result = training::train(student, train_set, val_set, config, hooks);
    teacher.module->train(teacher_was_training);
    return result;
}

} // namespace cataract::distillation
