#pragma once

#include <stdexcept>
#include <string>

namespace metanerv {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// tensor engine
struct ShapeMismatch : Error { using Error::Error; };
struct InvalidKernel : Error { using Error::Error; };
struct InvalidShape : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
struct DetachedTensor : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };

// losses
struct WindowTooLarge : Error { using Error::Error; };
struct NonIntegerFactor : Error { using Error::Error; };

// meta learner
struct NonFiniteLoss : Error { using Error::Error; };
struct EmptyVideo : Error { using Error::Error; };

// video io
struct NotFound : Error { using Error::Error; };
struct BadHeader : Error { using Error::Error; };
struct MixedResolutions : Error { using Error::Error; };

// compression
struct InvalidRatio : Error { using Error::Error; };
struct InvalidBits : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct VersionUnsupported : Error { using Error::Error; };

// cli
struct IoError : Error { using Error::Error; };

} // namespace metanerv
