#include "madm/schema.hpp"

#include <algorithm>
#include <set>

#include "madm/error.hpp"

namespace madm {

namespace {

using nlohmann::json;

const std::set<std::string> kKnownKeywords = {
    "$schema", "title",    "description", "definitions", "$ref",      "type",     "enum",
    "properties", "required", "additionalProperties", "items", "minItems", "maxItems", "uniqueItems",
    "minimum",  "maximum",  "exclusiveMinimum", "exclusiveMaximum", "minLength"};

std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') {
      out += "~0";
    } else if (c == '/') {
      out += "~1";
    } else {
      out += c;
    }
  }
  return out;
}

bool has_type(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "boolean") return value.is_boolean();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  if (type == "null") return value.is_null();
  throw Error("schema: unknown type '" + type + "'");
}

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& schema, const json& value, const std::string& ptr) {
    for (const auto& [key, _] : schema.items()) {
      if (!kKnownKeywords.count(key)) throw Error("schema: unsupported keyword '" + key + "'");
    }
    if (auto ref = schema.find("$ref"); ref != schema.end()) {
      check(resolve(ref->get<std::string>()), value, ptr);
      return;
    }
    if (auto type = schema.find("type"); type != schema.end()) {
      bool ok = false;
      std::string names;
      const auto types = type->is_array() ? *type : json::array({*type});
      for (const auto& t : types) {
        ok = ok || has_type(value, t.get<std::string>());
        names += (names.empty() ? "" : " or ") + t.get<std::string>();
      }
      if (!ok) {
        issue(ptr, "expected " + names + ", got " + std::string(value.type_name()));
        return;
      }
    }
    if (auto e = schema.find("enum"); e != schema.end()) {
      if (std::find(e->begin(), e->end(), value) == e->end()) issue(ptr, "value " + value.dump() + " is not allowed");
    }
    if (value.is_number()) check_number(schema, value.get<double>(), ptr);
    if (value.is_string()) {
      if (auto m = schema.find("minLength"); m != schema.end() && value.get<std::string>().size() < m->get<std::size_t>()) {
        issue(ptr, "string shorter than " + m->dump());
      }
    }
    if (value.is_array()) check_array(schema, value, ptr);
    if (value.is_object()) check_object(schema, value, ptr);
  }

  std::vector<SchemaIssue> issues;

 private:
  const json& resolve(const std::string& ref) {
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) throw Error("schema: only local definitions can be referenced: " + ref);
    const auto name = ref.substr(prefix.size());
    const auto defs = root_.find("definitions");
    if (defs == root_.end() || !defs->contains(name)) throw Error("schema: unknown reference " + ref);
    return defs->at(name);
  }

  void issue(const std::string& ptr, std::string message) {
    issues.push_back({ptr.empty() ? "/" : ptr, std::move(message)});
  }

  void check_number(const json& schema, double v, const std::string& ptr) {
    if (auto m = schema.find("minimum"); m != schema.end() && v < m->get<double>()) {
      issue(ptr, "must be >= " + m->dump());
    }
    if (auto m = schema.find("maximum"); m != schema.end() && v > m->get<double>()) {
      issue(ptr, "must be <= " + m->dump());
    }
    if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && v <= m->get<double>()) {
      issue(ptr, "must be > " + m->dump());
    }
    if (auto m = schema.find("exclusiveMaximum"); m != schema.end() && v >= m->get<double>()) {
      issue(ptr, "must be < " + m->dump());
    }
  }

  void check_array(const json& schema, const json& value, const std::string& ptr) {
    if (auto m = schema.find("minItems"); m != schema.end() && value.size() < m->get<std::size_t>()) {
      issue(ptr, "needs at least " + m->dump() + " items");
    }
    if (auto m = schema.find("maxItems"); m != schema.end() && value.size() > m->get<std::size_t>()) {
      issue(ptr, "allows at most " + m->dump() + " items");
    }
    if (schema.value("uniqueItems", false)) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        for (std::size_t j = i + 1; j < value.size(); ++j) {
          if (value[i] == value[j]) issue(ptr + "/" + std::to_string(j), "duplicate item");
        }
      }
    }
    if (auto items = schema.find("items"); items != schema.end()) {
      for (std::size_t i = 0; i < value.size(); ++i) check(*items, value[i], ptr + "/" + std::to_string(i));
    }
  }

  void check_object(const json& schema, const json& value, const std::string& ptr) {
    if (auto req = schema.find("required"); req != schema.end()) {
      for (const auto& k : *req) {
        if (!value.contains(k.get<std::string>())) {
          issue(ptr + "/" + escape_token(k.get<std::string>()), "required property is missing");
        }
      }
    }
    const auto props = schema.find("properties");
    const bool closed = schema.contains("additionalProperties") && !schema.at("additionalProperties").get<bool>();
    for (const auto& [key, child] : value.items()) {
      const std::string child_ptr = ptr + "/" + escape_token(key);
      if (props != schema.end() && props->contains(key)) {
        check(props->at(key), child, child_ptr);
      } else if (closed) {
        issue(child_ptr, "unknown property");
      }
    }
  }

  const json& root_;
};

}  // namespace

std::vector<SchemaIssue> validate_schema(const nlohmann::json& schema, const nlohmann::json& doc) {
  Validator v(schema);
  v.check(schema, doc, "");
  return v.issues;
}

}  // namespace madm
