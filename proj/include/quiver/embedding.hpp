#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "quiver/error.hpp"
#include "quiver/hash.hpp"
#include "quiver/typed_value.hpp"

namespace quiver {

// text -> fixed-dimension vector. Implementations must be deterministic and
// safe for concurrent reads.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Signed feature hashing of lowercase whitespace tokens.
class HashedBagOfTokens final : public EmbeddingProvider {
 public:
  explicit HashedBagOfTokens(std::size_t dim = 1024) : dim_(dim) {
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
  }

  std::size_t dim() const override { return dim_; }

  std::vector<double> embed(std::string_view text) const override {
    std::vector<double> v(dim_, 0.0);
    for (const auto& tok : tokenize(text)) {
      const auto h = fnv1a64(tok);
      const double sign = (h >> 63) ? -1.0 : 1.0;
      v[static_cast<std::size_t>((h & 0x7fffffffffffffffULL) % dim_)] += sign;
    }
    return v;
  }

 private:
  std::size_t dim_;
};

// Precomputed vectors. Header line {"dim": D}, then {"text": ..., "vector": [...]}.
class EmbeddingTable final : public EmbeddingProvider {
 public:
  EmbeddingTable(std::size_t dim, std::unordered_map<std::string, std::vector<double>> rows)
      : dim_(dim), rows_(std::move(rows)) {}

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open embedding table '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> rows;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = json::parse(line);
        if (dim == 0) {
          dim = j.at("dim").get<std::size_t>();
          if (dim == 0) throw ValidationError("dim must be positive");
          continue;
        }
        auto vec = j.at("vector").get<std::vector<double>>();
        if (vec.size() != dim)
          throw ValidationError("vector has dimension " + std::to_string(vec.size()) + ", header says " +
                                std::to_string(dim));
        rows.insert_or_assign(j.at("text").get<std::string>(), std::move(vec));
      } catch (const json::exception& e) {
        throw ValidationError("embedding table line " + std::to_string(lineno) + ": " + e.what());
      } catch (const ValidationError& e) {
        throw ValidationError("embedding table line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (dim == 0) throw ValidationError("embedding table '" + path + "' has no header line");
    return EmbeddingTable(dim, std::move(rows));
  }

  std::size_t dim() const override { return dim_; }

  std::vector<double> embed(std::string_view text) const override {
    auto it = rows_.find(std::string(text));
    if (it == rows_.end())
      throw ValidationError("text not present in embedding table: \"" + std::string(text.substr(0, 60)) + "\"");
    return it->second;
  }

  std::size_t size() const { return rows_.size(); }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> rows_;
};

inline std::shared_ptr<const EmbeddingProvider> default_embedding() {
  static const auto provider = std::make_shared<const HashedBagOfTokens>();
  return provider;
}

// Cosine similarity; zero vectors are similar only to other zero vectors.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return 1.0;
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace quiver
