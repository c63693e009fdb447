// Exception hierarchy. Every error carries a machine-parseable class name
// (first token of what the CLI prints) plus a human message.
#pragma once

#include <stdexcept>
#include <string>

namespace respira {

class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(cls + ": " + msg), cls_(std::move(cls)) {}

    const std::string& error_class() const { return cls_; }

private:
    std::string cls_;
};

#define RESPIRA_DEFINE_ERROR(Name)                         \
    class Name : public Error {                            \
    public:                                                \
        explicit Name(const std::string& msg)              \
            : Error(#Name, msg) {}                         \
    }

RESPIRA_DEFINE_ERROR(AudioTooShort);
RESPIRA_DEFINE_ERROR(InvalidConfig);
RESPIRA_DEFINE_ERROR(ParseError);
RESPIRA_DEFINE_ERROR(SplitViolation);
RESPIRA_DEFINE_ERROR(ShapeMismatch);
RESPIRA_DEFINE_ERROR(NonFiniteValue);
RESPIRA_DEFINE_ERROR(NonScalarLoss);
RESPIRA_DEFINE_ERROR(MissingGradient);
RESPIRA_DEFINE_ERROR(InsufficientParticipants);
RESPIRA_DEFINE_ERROR(ZeroNorm);
RESPIRA_DEFINE_ERROR(NonPositiveTemperature);
RESPIRA_DEFINE_ERROR(ConfigMismatch);
RESPIRA_DEFINE_ERROR(EmptySplit);
RESPIRA_DEFINE_ERROR(EmptyList);
RESPIRA_DEFINE_ERROR(EmptyBenchmark);
RESPIRA_DEFINE_ERROR(IoError);

#undef RESPIRA_DEFINE_ERROR

}  // namespace respira
