#pragma once

#include <stdexcept>
#include <string>

namespace cataract {

/// Base of every error raised by the pipeline. `category()` is the short tag
/// printed by the CLI in front of the message.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define CATARACT_DEFINE_ERROR(Name, tag)                                        \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what) : Error(tag, what) {}            \
    };

CATARACT_DEFINE_ERROR(IoError, "io")
CATARACT_DEFINE_ERROR(SchemaError, "schema")
CATARACT_DEFINE_ERROR(ConfigError, "config")
CATARACT_DEFINE_ERROR(StratificationError, "stratification")
CATARACT_DEFINE_ERROR(DecodeError, "decode")
CATARACT_DEFINE_ERROR(ParameterError, "parameter")
CATARACT_DEFINE_ERROR(RegistryError, "registry")
CATARACT_DEFINE_ERROR(LoadError, "load")
CATARACT_DEFINE_ERROR(ShapeError, "shape")
CATARACT_DEFINE_ERROR(ConstructionError, "construction")
CATARACT_DEFINE_ERROR(NumericError, "numeric")
CATARACT_DEFINE_ERROR(MetricError, "metric")
CATARACT_DEFINE_ERROR(InputError, "input")
CATARACT_DEFINE_ERROR(UnsupportedLayerError, "unsupported-layer")
CATARACT_DEFINE_ERROR(StateError, "state")

#undef CATARACT_DEFINE_ERROR

/// Non-finite training loss. Carries the 1-based epoch in which it appeared.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch, const std::string& what)
        : Error("divergence", what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

} // namespace cataract
