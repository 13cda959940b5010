#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memfuse {

enum class errc {
    // corpus
    malformed_line,
    duplicate_id,
    target_out_of_range,
    inconsistent_schema,
    empty_dataset,
    invalid_spec,
    // providers
    provider_unavailable,
    dimension_mismatch,
    prompt_too_long,
    storage_failure,
    // splits
    k_too_large,
    zero_vector,
    missing_embedding,
    too_few_groups,
    // features
    not_enough_candidates,
    degenerate_data,
    // hgbt
    degenerate_input,
    non_finite_feature,
    invalid_params,
    // fusion
    sequence_too_long,
    stream_mismatch,
    batch_too_small,
    non_finite_loss,
    grad_check_failure,
    not_lora_model,
    // runner
    length_mismatch,
    leakage_detected,
    // generic
    io_error,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::malformed_line: return "MalformedLine";
        case errc::duplicate_id: return "DuplicateId";
        case errc::target_out_of_range: return "TargetOutOfRange";
        case errc::inconsistent_schema: return "InconsistentSchema";
        case errc::empty_dataset: return "EmptyDataset";
        case errc::invalid_spec: return "InvalidSpec";
        case errc::provider_unavailable: return "ProviderUnavailable";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::prompt_too_long: return "PromptTooLong";
        case errc::storage_failure: return "StorageFailure";
        case errc::k_too_large: return "KTooLarge";
        case errc::zero_vector: return "ZeroVector";
        case errc::missing_embedding: return "MissingEmbedding";
        case errc::too_few_groups: return "TooFewGroups";
        case errc::not_enough_candidates: return "NotEnoughCandidates";
        case errc::degenerate_data: return "DegenerateData";
        case errc::degenerate_input: return "DegenerateInput";
        case errc::non_finite_feature: return "NonFiniteFeature";
        case errc::invalid_params: return "InvalidParams";
        case errc::sequence_too_long: return "SequenceTooLong";
        case errc::stream_mismatch: return "StreamMismatch";
        case errc::batch_too_small: return "BatchTooSmall";
        case errc::non_finite_loss: return "NonFiniteLoss";
        case errc::grad_check_failure: return "GradCheckFailure";
        case errc::not_lora_model: return "NotLoraModel";
        case errc::length_mismatch: return "LengthMismatch";
        case errc::leakage_detected: return "LeakageDetected";
        case errc::io_error: return "IoError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
  public:
    Error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& what) { throw Error(code, what); }

// --- stable hashing -------------------------------------------------------

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// --- deterministic RNG ----------------------------------------------------

// splitmix64 stream; bit-stable across platforms, unlike <random> distributions.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; consumes two draws, no cached spare
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // integer in [0, n)
    size_t index(size_t n) { return static_cast<size_t>(next_u64() % n); }

    int64_t range(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    Rng fork(uint64_t salt) { return Rng(splitmix64(state_ ^ splitmix64(salt))); }

  private:
    uint64_t state_;
};

// --- whitespace tokenization ----------------------------------------------

inline bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_ws(s[i])) ++i;
        size_t start = i;
        while (i < s.size() && !is_ws(s[i])) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

inline size_t count_whitespace_tokens(std::string_view s) { return split_whitespace(s).size(); }

inline std::string join_tokens(const std::vector<std::string_view>& tokens, size_t begin, size_t end) {
    std::string out;
    for (size_t i = begin; i < end && i < tokens.size(); ++i) {
        if (i > begin) out.push_back(' ');
        out.append(tokens[i]);
    }
    return out;
}

inline double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace memfuse
