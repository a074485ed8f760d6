#pragma once

#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zsoc {

enum class Errc {
    bad_magic,
    version_unsupported,
    truncated_payload,
    metadata_mismatch,
    duplicate_id,
    invalid_data,
    io_failure,
    dimension_mismatch,
    zero_norm_vector,
    empty_negatives,
    zero_norm_mean,
    alpha_out_of_range,
    nonpositive_temperature,
    invalid_spec,
    endpoint_unreachable,
    auth_failure,
    unparseable_response,
    empty_after_sanitization,
    target_not_found,
    fewer_than_one_candidate,
    parse_error,
    invariant_violation,
    empty_scores,
    insufficient_classes,
    insufficient_images,
    insufficient_data,
    level_too_deep,
    empty_class,
    undefined_rate,
    missing_negatives_for_target,
    missing_prototype,
    config_invalid,
};

constexpr std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::bad_magic: return "bad-magic";
    case Errc::version_unsupported: return "version-unsupported";
    case Errc::truncated_payload: return "truncated-payload";
    case Errc::metadata_mismatch: return "metadata-mismatch";
    case Errc::duplicate_id: return "duplicate-id";
    case Errc::invalid_data: return "invalid-data";
    case Errc::io_failure: return "io-failure";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::zero_norm_vector: return "zero-norm-vector";
    case Errc::empty_negatives: return "empty-negatives";
    case Errc::zero_norm_mean: return "zero-norm-mean";
    case Errc::alpha_out_of_range: return "alpha-out-of-range";
    case Errc::nonpositive_temperature: return "nonpositive-temperature";
    case Errc::invalid_spec: return "invalid-spec";
    case Errc::endpoint_unreachable: return "endpoint-unreachable";
    case Errc::auth_failure: return "auth-failure";
    case Errc::unparseable_response: return "unparseable-response-after-retry";
    case Errc::empty_after_sanitization: return "empty-after-sanitization";
    case Errc::target_not_found: return "target-not-found";
    case Errc::fewer_than_one_candidate: return "fewer-than-one-candidate";
    case Errc::parse_error: return "parse-error";
    case Errc::invariant_violation: return "invariant-violation";
    case Errc::empty_scores: return "empty-scores";
    case Errc::insufficient_classes: return "insufficient-classes";
    case Errc::insufficient_images: return "insufficient-images";
    case Errc::insufficient_data: return "insufficient-data-after-retries";
    case Errc::level_too_deep: return "level-too-deep";
    case Errc::empty_class: return "empty-class";
    case Errc::undefined_rate: return "undefined-rate";
    case Errc::missing_negatives_for_target: return "missing-negatives-for-target";
    case Errc::missing_prototype: return "missing-prototype";
    case Errc::config_invalid: return "config-invalid";
    }
    return "unknown";
}

/// Every failure in the library surfaces as this exception; `code()` is the
/// stable machine-readable identifier printed by the CLI.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

namespace detail {
inline bool& warnings_enabled() {
    static bool enabled = true;
    return enabled;
}
} // namespace detail

inline void set_warnings_enabled(bool on) { detail::warnings_enabled() = on; }

inline void warn(std::string_view message) {
    if (detail::warnings_enabled()) std::cerr << "warning: " << message << '\n';
}

} // namespace zsoc
