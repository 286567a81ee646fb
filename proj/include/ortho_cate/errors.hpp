#pragma once

#include <stdexcept>
#include <string>

namespace ortho_cate {

// Base class for every library error, so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define ORTHO_CATE_ERROR(NAME)                         \
    struct NAME : Error {                              \
        explicit NAME(const std::string& msg)          \
            : Error(std::string(#NAME) + ": " + msg) {} \
    }

// core
ORTHO_CATE_ERROR(MissingColumn);
ORTHO_CATE_ERROR(NonBinaryTreatment);
ORTHO_CATE_ERROR(NonFiniteValue);
ORTHO_CATE_ERROR(InvalidK);

// weights / pseudo
ORTHO_CATE_ERROR(PropensityOutOfRange);
ORTHO_CATE_ERROR(ZeroDenominator);

// base learners
ORTHO_CATE_ERROR(DegenerateDesign);
ORTHO_CATE_ERROR(DimensionMismatch);
ORTHO_CATE_ERROR(SingleClass);
ORTHO_CATE_ERROR(AllSpecsFailed);

// meta learners
ORTHO_CATE_ERROR(SingleArm);
ORTHO_CATE_ERROR(SingleArmInFold);
ORTHO_CATE_ERROR(VSubsetNotSupported);
ORTHO_CATE_ERROR(EmptySecondStage);

// dgp / config
ORTHO_CATE_ERROR(InvalidParams);

// metrics
ORTHO_CATE_ERROR(LengthMismatch);
ORTHO_CATE_ERROR(Empty);
ORTHO_CATE_ERROR(NoTreated);

// diagnostics
ORTHO_CATE_ERROR(ZeroNormalizer);
ORTHO_CATE_ERROR(DegenerateDirection);
ORTHO_CATE_ERROR(StepTooSmall);

#undef ORTHO_CATE_ERROR

}  // namespace ortho_cate
