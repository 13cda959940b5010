#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "memfuse/common.hpp"

namespace memfuse {

// --- provider contracts -----------------------------------------------------

class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual const std::string& provider_id() const = 0;
    virtual const std::string& model_id() const = 0;
    virtual int dimension() const = 0;
    // Returns an L2-unit vector of length dimension().
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

class GenerationProvider {
  public:
    virtual ~GenerationProvider() = default;
    virtual const std::string& provider_id() const = 0;
    virtual const std::string& model_id() const = 0;
    virtual int max_output_tokens() const = 0;
    virtual int max_context_tokens() const = 0;
    virtual std::string generate(const std::string& prompt, int max_tokens, double temperature) const = 0;
};

// --- deterministic mock embedder ---------------------------------------------
//
// Hashed character trigrams of the lowercased text, signed buckets, L2
// normalized. Lexically similar texts land close in cosine similarity, which is
// what nearest-neighbor selection and k-medoids need from a stand-in embedder.
class MockEmbeddingProvider final : public EmbeddingProvider {
  public:
    MockEmbeddingProvider(int dimension, std::string model_id = "mock-e5")
        : dim_(dimension),
          provider_id_("mock"),
          model_id_(std::move(model_id)),
          seed_(splitmix64(fnv1a64(provider_id_) ^ fnv1a64(model_id_))) {
        if (dim_ < 1) raise(errc::dimension_mismatch, "embedding dimension must be >= 1");
    }

    const std::string& provider_id() const override { return provider_id_; }
    const std::string& model_id() const override { return model_id_; }
    int dimension() const override { return dim_; }

    std::vector<double> embed(const std::string& text) const override {
        std::vector<double> v(static_cast<size_t>(dim_), 0.0);
        const std::string lower = lowercase(text);
        if (lower.size() >= 3) {
            for (size_t i = 0; i + 3 <= lower.size(); ++i) {
                const uint64_t h = splitmix64(fnv1a64(std::string_view(lower).substr(i, 3)) ^ seed_);
                const size_t bucket = static_cast<size_t>(h % static_cast<uint64_t>(dim_));
                v[bucket] += (h >> 63) ? -1.0 : 1.0;
            }
        }
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (norm2 <= 0.0) {
            // too short, or signs cancelled out: fixed basis vector
            std::fill(v.begin(), v.end(), 0.0);
            v[0] = 1.0;
            return v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
        return v;
    }

  private:
    int dim_;
    std::string provider_id_;
    std::string model_id_;
    uint64_t seed_;
};

// --- deterministic mock generator --------------------------------------------
//
// Two prompt kinds are recognized:
//  * summary prompts quote the source between "---" fence lines; the mock
//    returns the first max_tokens whitespace tokens of the quoted text.
//  * rationale prompts carry an "Aspects:" line; the mock emits one filler
//    sentence per listed aspect, preserving the aspect names verbatim.
class MockGenerationProvider final : public GenerationProvider {
  public:
    explicit MockGenerationProvider(std::string model_id = "mock-gemma", int max_output_tokens = 1024,
                                    int max_context_tokens = 8192)
        : provider_id_("mock"),
          model_id_(std::move(model_id)),
          max_output_tokens_(max_output_tokens),
          max_context_tokens_(max_context_tokens) {}

    const std::string& provider_id() const override { return provider_id_; }
    const std::string& model_id() const override { return model_id_; }
    int max_output_tokens() const override { return max_output_tokens_; }
    int max_context_tokens() const override { return max_context_tokens_; }

    std::string generate(const std::string& prompt, int max_tokens, double /*temperature*/) const override {
        if (max_tokens < 1) raise(errc::invalid_spec, "max_tokens must be >= 1");
        if (count_whitespace_tokens(prompt) > static_cast<size_t>(max_context_tokens_))
            raise(errc::prompt_too_long, "prompt exceeds " + std::to_string(max_context_tokens_) + " tokens");
        const int budget = std::min(max_tokens, max_output_tokens_);

        std::string body;
        const auto aspects = parse_aspects(prompt);
        if (!aspects.empty()) {
            for (const auto& a : aspects) {
                body += "Regarding " + a + ", the subtitles convey a steady, recognizable presence of " + a +
                        " throughout the video. ";
            }
        } else {
            body = fenced_text(prompt);
        }
        const auto tokens = split_whitespace(body);
        return join_tokens(tokens, 0, std::min(tokens.size(), static_cast<size_t>(budget)));
    }

  private:
    static std::vector<std::string> parse_aspects(const std::string& prompt) {
        std::vector<std::string> out;
        const std::string tag = "Aspects:";
        const size_t pos = prompt.find(tag);
        if (pos == std::string::npos) return out;
        const size_t eol = prompt.find('\n', pos);
        std::string line = prompt.substr(pos + tag.size(), eol == std::string::npos ? eol : eol - pos - tag.size());
        while (!line.empty() && (line.back() == '.' || line.back() == '\r')) line.pop_back();
        size_t start = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            std::string item = line.substr(start, comma == std::string::npos ? comma : comma - start);
            const size_t a = item.find_first_not_of(' ');
            const size_t b = item.find_last_not_of(' ');
            if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return out;
    }

    static std::string fenced_text(const std::string& prompt) {
        const std::string fence = "---";
        size_t open = prompt.find("\n" + fence);
        if (open == std::string::npos) return prompt;  // unfenced: echo the prompt itself
        open = prompt.find('\n', open + 1);
        if (open == std::string::npos) return "";
        const size_t close = prompt.find("\n" + fence, open);
        return prompt.substr(open + 1, close == std::string::npos ? close : close - open - 1);
    }

    std::string provider_id_;
    std::string model_id_;
    int max_output_tokens_;
    int max_context_tokens_;
};

// --- content digests -----------------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        raise(errc::storage_failure, "SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

// Canonical request digests: JSON with sorted keys, UTF-8 bytes.
inline std::string embed_request_digest(const std::string& text) {
    nlohmann::json j;
    j["op"] = "embed";
    j["text"] = text;
    return sha256_hex(j.dump());
}

inline std::string generate_request_digest(const std::string& prompt, int max_tokens, double temperature) {
    nlohmann::json j;
    j["max_tokens"] = max_tokens;
    j["op"] = "generate";
    j["prompt"] = prompt;
    j["temperature"] = temperature;
    return sha256_hex(j.dump());
}

// --- persistent content-addressed cache -------------------------------------------

struct CacheKey {
    std::string provider_id;
    std::string model_id;
    std::string digest;
};

// One file per entry under <root>/<provider_id>/<model_id>/<digest>. Writes go
// through a temp file plus rename so concurrent put/put on one key resolves to
// last-writer-wins with no torn reads.
class CacheStore {
  public:
    explicit CacheStore(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }

    std::optional<std::vector<uint8_t>> get(const CacheKey& key) const {
        const auto p = path_of(key);
        std::ifstream in(p, std::ios::binary);
        if (!in) return std::nullopt;
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (!in.good() && !in.eof()) raise(errc::storage_failure, "read failed for " + p.string());
        return bytes;
    }

    void put(const CacheKey& key, const std::vector<uint8_t>& payload) const {
        const auto p = path_of(key);
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) raise(errc::storage_failure, "mkdir failed: " + ec.message());
        const auto tmp = p.string() + ".tmp." +
                         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) raise(errc::storage_failure, "cannot open temp file " + tmp);
            out.write(reinterpret_cast<const char*>(payload.data()),
                      static_cast<std::streamsize>(payload.size()));
            if (!out.good()) raise(errc::storage_failure, "write failed for " + tmp);
        }
        std::filesystem::rename(tmp, p, ec);
        if (ec) raise(errc::storage_failure, "rename failed: " + ec.message());
    }

  private:
    std::filesystem::path path_of(const CacheKey& key) const {
        if (key.provider_id.empty() || key.model_id.empty() || key.digest.empty())
            raise(errc::storage_failure, "cache key fields must be non-empty");
        return root_ / key.provider_id / key.model_id / key.digest;
    }

    std::filesystem::path root_;
};

// --- cache payload encodings --------------------------------------------------------

// Embedding payload: 4-byte little-endian length, then 32-bit little-endian floats.
inline std::vector<uint8_t> encode_embedding(const std::vector<double>& v) {
    std::vector<uint8_t> bytes;
    bytes.reserve(4 + 4 * v.size());
    const uint32_t n = static_cast<uint32_t>(v.size());
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<uint8_t>((n >> (8 * b)) & 0xff));
    for (double x : v) {
        const float f = static_cast<float>(x);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<uint8_t>((u >> (8 * b)) & 0xff));
    }
    return bytes;
}

inline std::vector<double> decode_embedding(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) raise(errc::storage_failure, "embedding payload too short");
    uint32_t n = 0;
    for (int b = 0; b < 4; ++b) n |= static_cast<uint32_t>(bytes[static_cast<size_t>(b)]) << (8 * b);
    if (bytes.size() != 4 + 4 * static_cast<size_t>(n))
        raise(errc::storage_failure, "embedding payload length mismatch");
    std::vector<double> v(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(bytes[4 + 4 * i + static_cast<uint32_t>(b)]) << (8 * b);
        float f;
        std::memcpy(&f, &u, 4);
        v[i] = static_cast<double>(f);
    }
    return v;
}

// --- cached wrappers ----------------------------------------------------------------

// Embedding results pass through the float32 wire encoding on miss as well as on
// hit, so a warm cache and a cold cache return bit-identical vectors.
class CachedEmbeddingProvider final : public EmbeddingProvider {
  public:
    CachedEmbeddingProvider(const EmbeddingProvider& inner, const CacheStore& cache)
        : inner_(inner), cache_(cache) {}

    const std::string& provider_id() const override { return inner_.provider_id(); }
    const std::string& model_id() const override { return inner_.model_id(); }
    int dimension() const override { return inner_.dimension(); }

    std::vector<double> embed(const std::string& text) const override {
        const CacheKey key{inner_.provider_id(), inner_.model_id(), embed_request_digest(text)};
        std::vector<uint8_t> payload;
        if (auto hit = cache_.get(key)) {
            payload = std::move(*hit);
        } else {
            payload = encode_embedding(inner_.embed(text));
            cache_.put(key, payload);
        }
        auto v = decode_embedding(payload);
        if (static_cast<int>(v.size()) != inner_.dimension())
            raise(errc::dimension_mismatch, "cached embedding has dimension " + std::to_string(v.size()) +
                                                ", provider expects " + std::to_string(inner_.dimension()));
        return v;
    }

  private:
    const EmbeddingProvider& inner_;
    const CacheStore& cache_;
};

class CachedGenerationProvider final : public GenerationProvider {
  public:
    CachedGenerationProvider(const GenerationProvider& inner, const CacheStore& cache)
        : inner_(inner), cache_(cache) {}

    const std::string& provider_id() const override { return inner_.provider_id(); }
    const std::string& model_id() const override { return inner_.model_id(); }
    int max_output_tokens() const override { return inner_.max_output_tokens(); }
    int max_context_tokens() const override { return inner_.max_context_tokens(); }

    std::string generate(const std::string& prompt, int max_tokens, double temperature) const override {
        const CacheKey key{inner_.provider_id(), inner_.model_id(),
                           generate_request_digest(prompt, max_tokens, temperature)};
        if (auto hit = cache_.get(key)) return std::string(hit->begin(), hit->end());
        std::string text = inner_.generate(prompt, max_tokens, temperature);
        cache_.put(key, std::vector<uint8_t>(text.begin(), text.end()));
        return text;
    }

  private:
    const GenerationProvider& inner_;
    const CacheStore& cache_;
};

// --- remote-client retry contract ------------------------------------------------------
//
// Real remote providers plug in behind EmbeddingProvider/GenerationProvider.
// Transient failures (ProviderUnavailable) are retried with exponential backoff;
// anything else propagates immediately.
struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{100};
    double backoff_multiplier = 2.0;
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
};

template <typename F>
auto with_retries(const RetryPolicy& policy, F&& call) -> decltype(call()) {
    auto backoff = policy.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            return call();
        } catch (const Error& e) {
            if (e.code() != errc::provider_unavailable || attempt >= policy.max_attempts) throw;
        }
        policy.sleep(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<int64_t>(static_cast<double>(backoff.count()) * policy.backoff_multiplier));
    }
}

class RetryingEmbeddingProvider final : public EmbeddingProvider {
  public:
    RetryingEmbeddingProvider(const EmbeddingProvider& inner, RetryPolicy policy)
        : inner_(inner), policy_(std::move(policy)) {}

    const std::string& provider_id() const override { return inner_.provider_id(); }
    const std::string& model_id() const override { return inner_.model_id(); }
    int dimension() const override { return inner_.dimension(); }

    std::vector<double> embed(const std::string& text) const override {
        return with_retries(policy_, [&] { return inner_.embed(text); });
    }

  private:
    const EmbeddingProvider& inner_;
    RetryPolicy policy_;
};

class RetryingGenerationProvider final : public GenerationProvider {
  public:
    RetryingGenerationProvider(const GenerationProvider& inner, RetryPolicy policy)
        : inner_(inner), policy_(std::move(policy)) {}

    const std::string& provider_id() const override { return inner_.provider_id(); }
    const std::string& model_id() const override { return inner_.model_id(); }
    int max_output_tokens() const override { return inner_.max_output_tokens(); }
    int max_context_tokens() const override { return inner_.max_context_tokens(); }

    std::string generate(const std::string& prompt, int max_tokens, double temperature) const override {
        return with_retries(policy_, [&] { return inner_.generate(prompt, max_tokens, temperature); });
    }

  private:
    const GenerationProvider& inner_;
    RetryPolicy policy_;
};

}  // namespace memfuse
