#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wcmi/dataset.hpp"
#include "wcmi/network.hpp"

namespace wcmi::io {

/**
 * Mutable JSON tree that preserves object key insertion order and prints
 * reals with 17 significant digits, so every double survives a round trip
 * and a reparsed document dumps byte-identically.
 */
class JsonValue {
public:
    enum class Kind { null, boolean, integer, uinteger, real, string, array, object };

    using Member = std::pair<std::string, JsonValue>;

    JsonValue() : kind_(Kind::null) {}
    JsonValue(bool b) : kind_(Kind::boolean), bool_(b) {}
    JsonValue(int v) : kind_(Kind::integer), int_(v) {}
    JsonValue(long long v) : kind_(Kind::integer), int_(v) {}
    JsonValue(unsigned long long v) : kind_(Kind::uinteger), uint_(v) {}
    JsonValue(std::size_t v) : kind_(Kind::uinteger), uint_(v) {}
    JsonValue(double v) : kind_(Kind::real), real_(v) {
        if (!std::isfinite(v)) throw std::invalid_argument("JsonValue: non-finite real");
    }
    JsonValue(const char* s) : kind_(Kind::string), string_(s) {}
    JsonValue(std::string s) : kind_(Kind::string), string_(std::move(s)) {}

    static JsonValue array() {
        JsonValue v;
        v.kind_ = Kind::array;
        return v;
    }
    static JsonValue object() {
        JsonValue v;
        v.kind_ = Kind::object;
        return v;
    }

    Kind kind() const { return kind_; }
    bool is_null() const { return kind_ == Kind::null; }
    bool is_object() const { return kind_ == Kind::object; }
    bool is_array() const { return kind_ == Kind::array; }
    bool is_string() const { return kind_ == Kind::string; }
    bool is_bool() const { return kind_ == Kind::boolean; }
    bool is_number() const {
        return kind_ == Kind::integer || kind_ == Kind::uinteger || kind_ == Kind::real;
    }
    bool is_integer() const { return kind_ == Kind::integer || kind_ == Kind::uinteger; }

    bool as_bool() const {
        require(Kind::boolean, "boolean");
        return bool_;
    }
    const std::string& as_string() const {
        require(Kind::string, "string");
        return string_;
    }
    long long as_int() const {
        if (kind_ == Kind::integer) return int_;
        if (kind_ == Kind::uinteger) {
            if (uint_ > static_cast<unsigned long long>(INT64_MAX))
                throw std::invalid_argument("JsonValue: integer too large");
            return static_cast<long long>(uint_);
        }
        throw std::invalid_argument("JsonValue: expected integer");
    }
    unsigned long long as_uint() const {
        if (kind_ == Kind::uinteger) return uint_;
        if (kind_ == Kind::integer) {
            if (int_ < 0) throw std::invalid_argument("JsonValue: expected nonnegative integer");
            return static_cast<unsigned long long>(int_);
        }
        throw std::invalid_argument("JsonValue: expected integer");
    }
    double as_real() const {
        if (kind_ == Kind::real) return real_;
        if (kind_ == Kind::integer) return static_cast<double>(int_);
        if (kind_ == Kind::uinteger) return static_cast<double>(uint_);
        throw std::invalid_argument("JsonValue: expected number");
    }

    const std::vector<JsonValue>& items() const {
        require(Kind::array, "array");
        return items_;
    }
    const std::vector<Member>& members() const {
        require(Kind::object, "object");
        return members_;
    }

    void push_back(JsonValue v) {
        require(Kind::array, "array");
        items_.push_back(std::move(v));
    }
    std::size_t size() const {
        if (kind_ == Kind::array) return items_.size();
        if (kind_ == Kind::object) return members_.size();
        throw std::invalid_argument("JsonValue: size of a scalar");
    }

    /// Object access; inserts a null member on first use of a key.
    JsonValue& operator[](const std::string& key) {
        require(Kind::object, "object");
        for (auto& m : members_)
            if (m.first == key) return m.second;
        members_.emplace_back(key, JsonValue());
        return members_.back().second;
    }
    const JsonValue& at(const std::string& key) const {
        const JsonValue* v = find(key);
        if (!v) throw std::invalid_argument("JsonValue: missing key '" + key + "'");
        return *v;
    }
    const JsonValue* find(const std::string& key) const {
        require(Kind::object, "object");
        for (const auto& m : members_)
            if (m.first == key) return &m.second;
        return nullptr;
    }
    const JsonValue& operator[](std::size_t i) const {
        require(Kind::array, "array");
        return items_.at(i);
    }
    JsonValue& operator[](std::size_t i) {
        require(Kind::array, "array");
        return items_.at(i);
    }

    /// Structural equality; numbers compare by value across kinds.
    friend bool operator==(const JsonValue& a, const JsonValue& b) {
        if (a.is_number() && b.is_number()) {
            if (a.kind_ == Kind::real || b.kind_ == Kind::real)
                return a.as_real() == b.as_real();
            if (a.kind_ == Kind::uinteger || b.kind_ == Kind::uinteger) {
                if ((a.kind_ == Kind::integer && a.int_ < 0) ||
                    (b.kind_ == Kind::integer && b.int_ < 0))
                    return false;
                return a.as_uint() == b.as_uint();
            }
            return a.int_ == b.int_;
        }
        if (a.kind_ != b.kind_) return false;
        switch (a.kind_) {
            case Kind::null: return true;
            case Kind::boolean: return a.bool_ == b.bool_;
            case Kind::string: return a.string_ == b.string_;
            case Kind::array: return a.items_ == b.items_;
            case Kind::object: return a.members_ == b.members_;
            default: return false;
        }
    }

    std::string dump(int indent = 2) const {
        std::string out;
        write(out, indent, 0);
        if (indent >= 0) out.push_back('\n');
        return out;
    }

private:
    void require(Kind k, const char* what) const {
        if (kind_ != k) throw std::invalid_argument(std::string("JsonValue: expected ") + what);
    }

    static void write_string(std::string& out, const std::string& s) {
        out.push_back('"');
        for (char c : s) {
            switch (c) {
                case '"': out += "\\\""; break;
                case '\\': out += "\\\\"; break;
                case '\n': out += "\\n"; break;
                case '\t': out += "\\t"; break;
                case '\r': out += "\\r"; break;
                default:
                    if (static_cast<unsigned char>(c) < 0x20) {
                        char buf[8];
                        std::snprintf(buf, sizeof buf, "\\u%04x", c);
                        out += buf;
                    } else {
                        out.push_back(c);
                    }
            }
        }
        out.push_back('"');
    }

    static void write_real(std::string& out, double v) {
        if (v == 0.0 && std::signbit(v)) {
            out += "-0.0";
            return;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out += buf;
    }

    void write(std::string& out, int indent, int depth) const {
        const std::string pad = indent >= 0 ? std::string(std::size_t(indent) * (depth + 1), ' ')
                                            : std::string();
        const std::string close = indent >= 0 ? std::string(std::size_t(indent) * depth, ' ')
                                              : std::string();
        const char* nl = indent >= 0 ? "\n" : "";
        switch (kind_) {
            case Kind::null: out += "null"; break;
            case Kind::boolean: out += bool_ ? "true" : "false"; break;
            case Kind::integer: out += std::to_string(int_); break;
            case Kind::uinteger: out += std::to_string(uint_); break;
            case Kind::real: write_real(out, real_); break;
            case Kind::string: write_string(out, string_); break;
            case Kind::array:
                if (items_.empty()) {
                    out += "[]";
                    break;
                }
                out += "[";
                out += nl;
                for (std::size_t i = 0; i < items_.size(); ++i) {
                    out += pad;
                    items_[i].write(out, indent, depth + 1);
                    if (i + 1 < items_.size()) out += ",";
                    out += nl;
                }
                out += close;
                out += "]";
                break;
            case Kind::object:
                if (members_.empty()) {
                    out += "{}";
                    break;
                }
                out += "{";
                out += nl;
                for (std::size_t i = 0; i < members_.size(); ++i) {
                    out += pad;
                    write_string(out, members_[i].first);
                    out += indent >= 0 ? ": " : ":";
                    members_[i].second.write(out, indent, depth + 1);
                    if (i + 1 < members_.size()) out += ",";
                    out += nl;
                }
                out += close;
                out += "}";
                break;
        }
    }

    Kind kind_;
    bool bool_ = false;
    long long int_ = 0;
    unsigned long long uint_ = 0;
    double real_ = 0.0;
    std::string string_;
    std::vector<JsonValue> items_;
    std::vector<Member> members_;
};

namespace detail {

inline JsonValue from_nlohmann(const nlohmann::ordered_json& j) {
    using nlohmann::ordered_json;
    switch (j.type()) {
        case ordered_json::value_t::null: return JsonValue();
        case ordered_json::value_t::boolean: return JsonValue(j.get<bool>());
        case ordered_json::value_t::number_integer: return JsonValue(j.get<long long>());
        case ordered_json::value_t::number_unsigned:
            return JsonValue(j.get<unsigned long long>());
        case ordered_json::value_t::number_float: return JsonValue(j.get<double>());
        case ordered_json::value_t::string: return JsonValue(j.get<std::string>());
        case ordered_json::value_t::array: {
            JsonValue v = JsonValue::array();
            for (const auto& item : j) v.push_back(from_nlohmann(item));
            return v;
        }
        case ordered_json::value_t::object: {
            JsonValue v = JsonValue::object();
            for (auto it = j.begin(); it != j.end(); ++it) v[it.key()] = from_nlohmann(it.value());
            return v;
        }
        default:
            throw FormatError("parse_json: unsupported value type");
    }
}

}  // namespace detail

inline JsonValue parse_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("parse_json: ") + e.what());
    }
    return detail::from_nlohmann(j);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << text;
    if (!out) throw FormatError(path + ": write failed");
}

inline JsonValue load_json(const std::string& path) {
    try {
        return parse_json(read_text_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline void save_json(const std::string& path, const JsonValue& v) {
    write_text_file(path, v.dump());
}

inline constexpr int kNetworkFormatVersion = 1;

/// Portable network description: layer shapes plus the flat parameter store.
inline JsonValue network_to_json(const Network& net) {
    JsonValue v = JsonValue::object();
    v["format_version"] = JsonValue(kNetworkFormatVersion);
    v["input_dim"] = JsonValue(net.input_dim());
    v["output_dim"] = JsonValue(net.output_dim());
    JsonValue layers = JsonValue::array();
    for (const auto& layer : net.layers()) {
        JsonValue l = JsonValue::object();
        l["kind"] = JsonValue(layer_kind_name(layer.kind));
        l["in"] = JsonValue(layer.in);
        l["out"] = JsonValue(layer.out);
        layers.push_back(std::move(l));
    }
    v["layers"] = std::move(layers);
    JsonValue params = JsonValue::array();
    for (double p : net.params()) params.push_back(JsonValue(p));
    v["params"] = std::move(params);
    return v;
}

inline Network network_from_json(const JsonValue& v) {
    if (!v.is_object()) throw FormatError("network_from_json: expected an object");
    if (v.at("format_version").as_int() != kNetworkFormatVersion)
        throw FormatError("network_from_json: unsupported format_version");
    std::vector<Network::Layer> layers;
    std::size_t offset = 0;
    for (const auto& l : v.at("layers").items()) {
        Network::Layer layer;
        layer.kind = layer_kind_from_name(l.at("kind").as_string());
        layer.in = std::size_t(l.at("in").as_uint());
        layer.out = std::size_t(l.at("out").as_uint());
        layer.offset = layer.kind == LayerKind::affine ? offset : 0;
        if (layer.kind == LayerKind::affine) offset += layer.out * layer.in + layer.out;
        layers.push_back(layer);
    }
    Vec params;
    params.reserve(v.at("params").size());
    for (const auto& p : v.at("params").items()) params.push_back(p.as_real());
    try {
        return Network::from_layers(std::move(layers), std::move(params),
                                    std::size_t(v.at("input_dim").as_uint()),
                                    std::size_t(v.at("output_dim").as_uint()));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("network_from_json: ") + e.what());
    }
}

inline void save_network(const std::string& path, const Network& net) {
    save_json(path, network_to_json(net));
}

inline Network load_network(const std::string& path) {
    return network_from_json(load_json(path));
}

/**
 * Validates an instance against a small schema dialect: type, enum, const,
 * required, properties, additionalProperties (boolean), items, oneOf,
 * minimum. Returns the first violation as "<path>: <reason>", or nothing.
 */
inline std::optional<std::string> schema_error(const JsonValue& instance, const JsonValue& schema,
                                               const std::string& path = "$") {
    if (!schema.is_object()) return path + ": schema must be an object";

    auto type_name = [](const JsonValue& v) -> std::string {
        switch (v.kind()) {
            case JsonValue::Kind::null: return "null";
            case JsonValue::Kind::boolean: return "boolean";
            case JsonValue::Kind::integer:
            case JsonValue::Kind::uinteger: return "integer";
            case JsonValue::Kind::real: return "number";
            case JsonValue::Kind::string: return "string";
            case JsonValue::Kind::array: return "array";
            case JsonValue::Kind::object: return "object";
        }
        return "unknown";
    };
    auto matches_type = [&](const std::string& want) {
        if (want == "number") return instance.is_number();
        if (want == "integer") return instance.is_integer();
        return type_name(instance) == want;
    };

    if (const JsonValue* type = schema.find("type")) {
        bool ok = false;
        if (type->is_string()) {
            ok = matches_type(type->as_string());
        } else {
            for (const auto& t : type->items()) ok = ok || matches_type(t.as_string());
        }
        if (!ok) return path + ": expected type " + type->dump(-1) + ", got " +
                        type_name(instance);
    }
    if (const JsonValue* cst = schema.find("const")) {
        if (!(instance == *cst)) return path + ": value differs from const " + cst->dump(-1);
    }
    if (const JsonValue* en = schema.find("enum")) {
        bool ok = false;
        for (const auto& option : en->items()) ok = ok || instance == option;
        if (!ok) return path + ": value not in enum " + en->dump(-1);
    }
    if (const JsonValue* mn = schema.find("minimum")) {
        if (instance.is_number() && instance.as_real() < mn->as_real())
            return path + ": value below minimum " + mn->dump(-1);
    }
    if (const JsonValue* one = schema.find("oneOf")) {
        std::size_t hits = 0;
        for (const auto& sub : one->items())
            if (!schema_error(instance, sub, path)) ++hits;
        if (hits != 1)
            return path + ": matched " + std::to_string(hits) + " of the oneOf branches";
    }
    if (instance.is_object()) {
        if (const JsonValue* req = schema.find("required")) {
            for (const auto& name : req->items())
                if (!instance.find(name.as_string()))
                    return path + ": missing required member '" + name.as_string() + "'";
        }
        const JsonValue* props = schema.find("properties");
        if (const JsonValue* extra = schema.find("additionalProperties");
            extra && extra->is_bool() && !extra->as_bool()) {
            for (const auto& m : instance.members())
                if (!props || !props->find(m.first))
                    return path + ": unexpected member '" + m.first + "'";
        }
        if (props) {
            for (const auto& m : instance.members())
                if (const JsonValue* sub = props->find(m.first))
                    if (auto err = schema_error(m.second, *sub, path + "." + m.first)) return err;
        }
    }
    if (instance.is_array()) {
        if (const JsonValue* items = schema.find("items")) {
            for (std::size_t i = 0; i < instance.size(); ++i)
                if (auto err = schema_error(instance[i], *items,
                                            path + "[" + std::to_string(i) + "]"))
                    return err;
        }
    }
    return std::nullopt;
}

}  // namespace wcmi::io
