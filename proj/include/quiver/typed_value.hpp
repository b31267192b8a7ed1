#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "quiver/error.hpp"

namespace quiver {

using json = nlohmann::json;

enum class FieldKind { categorical, boolean, set, ordered_list, numeric, text, mapping };

inline const char* to_string(FieldKind k) {
  switch (k) {
    case FieldKind::categorical: return "categorical";
    case FieldKind::boolean: return "boolean";
    case FieldKind::set: return "set";
    case FieldKind::ordered_list: return "ordered_list";
    case FieldKind::numeric: return "numeric";
    case FieldKind::text: return "text";
    case FieldKind::mapping: return "mapping";
  }
  return "?";
}

inline FieldKind parse_field_kind(std::string_view s) {
  if (s == "categorical") return FieldKind::categorical;
  if (s == "boolean") return FieldKind::boolean;
  if (s == "set") return FieldKind::set;
  if (s == "ordered_list") return FieldKind::ordered_list;
  if (s == "numeric") return FieldKind::numeric;
  if (s == "text") return FieldKind::text;
  if (s == "mapping") return FieldKind::mapping;
  throw ValidationError("unknown field kind '" + std::string(s) + "'");
}

struct Categorical {
  std::string label;
  bool operator==(const Categorical&) const = default;
};

struct Boolean {
  bool flag = false;
  bool operator==(const Boolean&) const = default;
};

// Elements are kept sorted and unique.
struct LabelSet {
  std::vector<std::string> elements;
  bool operator==(const LabelSet&) const = default;
};

struct OrderedList {
  std::vector<std::string> elements;
  bool operator==(const OrderedList&) const = default;
};

struct Numeric {
  double value = 0.0;
  bool operator==(const Numeric&) const = default;
};

struct Text {
  std::string value;
  bool operator==(const Text&) const = default;
};

struct Mapping {
  std::map<std::string, std::vector<std::string>> entries;
  bool operator==(const Mapping&) const = default;
};

// One field value of a node output. The alternative index follows FieldKind.
class TypedValue {
 public:
  using Storage =
      std::variant<Categorical, Boolean, LabelSet, OrderedList, Numeric, Text, Mapping>;

  TypedValue() = default;
  TypedValue(Categorical v) : v_(std::move(v)) {}
  TypedValue(Boolean v) : v_(v) {}
  TypedValue(LabelSet v) : v_(std::move(v)) {}
  TypedValue(OrderedList v) : v_(std::move(v)) {}
  TypedValue(Numeric v) : v_(v) {}
  TypedValue(Text v) : v_(std::move(v)) {}
  TypedValue(Mapping v) : v_(std::move(v)) {}

  static TypedValue categorical(std::string label) { return Categorical{std::move(label)}; }
  static TypedValue boolean(bool b) { return Boolean{b}; }
  static TypedValue numeric(double x) { return Numeric{x}; }
  static TypedValue text(std::string s) { return Text{std::move(s)}; }
  static TypedValue ordered_list(std::vector<std::string> xs) { return OrderedList{std::move(xs)}; }
  static TypedValue mapping(std::map<std::string, std::vector<std::string>> m) {
    return Mapping{std::move(m)};
  }

  // Throws if the elements are not unique.
  static TypedValue set(std::vector<std::string> xs) {
    std::sort(xs.begin(), xs.end());
    if (std::adjacent_find(xs.begin(), xs.end()) != xs.end()) {
      throw ValidationError("set value has duplicate elements");
    }
    return LabelSet{std::move(xs)};
  }

  FieldKind kind() const { return static_cast<FieldKind>(v_.index()); }

  template <typename T>
  const T& as() const {
    return std::get<T>(v_);
  }
  template <typename T>
  const T* get_if() const {
    return std::get_if<T>(&v_);
  }

  const Storage& storage() const { return v_; }

  bool operator==(const TypedValue&) const = default;

 private:
  Storage v_;
};

using NodeOutput = std::map<std::string, TypedValue>;

namespace detail {

inline std::vector<std::string> string_array(const json& j, std::string_view what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + ": expected array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_string()) throw ValidationError(std::string(what) + ": expected array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

// Decodes a JSON value under the declared kind; the JSON type is the tag.
inline TypedValue value_from_json(FieldKind kind, const json& j) {
  const std::string what = std::string("value of kind ") + to_string(kind);
  switch (kind) {
    case FieldKind::categorical:
      if (!j.is_string()) throw ValidationError(what + ": expected string label");
      return TypedValue::categorical(j.get<std::string>());
    case FieldKind::boolean:
      if (!j.is_boolean()) throw ValidationError(what + ": expected boolean");
      return TypedValue::boolean(j.get<bool>());
    case FieldKind::set:
      return TypedValue::set(detail::string_array(j, what));
    case FieldKind::ordered_list:
      return TypedValue::ordered_list(detail::string_array(j, what));
    case FieldKind::numeric:
      if (!j.is_number()) throw ValidationError(what + ": expected number");
      return TypedValue::numeric(j.get<double>());
    case FieldKind::text:
      if (!j.is_string()) throw ValidationError(what + ": expected string");
      return TypedValue::text(j.get<std::string>());
    case FieldKind::mapping: {
      if (!j.is_object()) throw ValidationError(what + ": expected object");
      std::map<std::string, std::vector<std::string>> m;
      for (auto it = j.begin(); it != j.end(); ++it) {
        m.emplace(it.key(), detail::string_array(it.value(), what));
      }
      return TypedValue::mapping(std::move(m));
    }
  }
  throw ValidationError("unreachable field kind");
}

inline json value_to_json(const TypedValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Categorical>) return x.label;
        else if constexpr (std::is_same_v<T, Boolean>) return x.flag;
        else if constexpr (std::is_same_v<T, LabelSet>) return x.elements;
        else if constexpr (std::is_same_v<T, OrderedList>) return x.elements;
        else if constexpr (std::is_same_v<T, Numeric>) return x.value;
        else if constexpr (std::is_same_v<T, Text>) return x.value;
        else {
          json o = json::object();
          for (const auto& [k, vs] : x.entries) o[k] = vs;
          return o;
        }
      },
      v.storage());
}

}  // namespace quiver
