#pragma once

#include <stdexcept>
#include <string>

namespace dasd {

// Every failure carries a stable machine-readable code next to the human
// message; the CLI surfaces the code in its JSON error object.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define DASD_DEFINE_ERROR(ClassName, code_literal)                          \
    class ClassName : public Error {                                        \
    public:                                                                  \
        explicit ClassName(const std::string& message)                      \
            : Error(code_literal, message) {}                               \
    }

DASD_DEFINE_ERROR(ShapeMismatch, "shape_mismatch");
DASD_DEFINE_ERROR(NonFinite, "non_finite");
DASD_DEFINE_ERROR(UnknownPrimitive, "unknown_primitive");
DASD_DEFINE_ERROR(NotScalar, "not_scalar");
DASD_DEFINE_ERROR(FrozenWrite, "frozen_write");
DASD_DEFINE_ERROR(VocabOverflow, "vocab_overflow");
DASD_DEFINE_ERROR(SequenceTooLong, "sequence_too_long");
DASD_DEFINE_ERROR(NotFrozen, "not_frozen");
DASD_DEFINE_ERROR(LayerOutOfRange, "layer_out_of_range");
DASD_DEFINE_ERROR(ZeroVector, "zero_vector");
DASD_DEFINE_ERROR(InvalidConfig, "invalid_config");
DASD_DEFINE_ERROR(MissingPart, "missing_part");
DASD_DEFINE_ERROR(DivergedTraining, "diverged_training");
DASD_DEFINE_ERROR(EmptySplit, "empty_split");
DASD_DEFINE_ERROR(DegenerateFeatures, "degenerate_features");
DASD_DEFINE_ERROR(BadMagic, "bad_magic");
DASD_DEFINE_ERROR(TruncatedPayload, "truncated_payload");
DASD_DEFINE_ERROR(ManifestMismatch, "manifest_mismatch");
DASD_DEFINE_ERROR(UnknownKey, "unknown_key");
DASD_DEFINE_ERROR(InvalidValue, "invalid_value");
DASD_DEFINE_ERROR(IoError, "io_error");
DASD_DEFINE_ERROR(UnknownArm, "unknown_arm");

#undef DASD_DEFINE_ERROR

}  // namespace dasd
