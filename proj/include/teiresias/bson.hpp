#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace teiresias::retrieval::bson {

class BsonError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Wire documents preserve insertion order: the first key of a command
// document is the command name. Binary values travel as {"$binary_raw":
// <bytes>}, ObjectIds as {"$oid": <24 hex chars>}, forced-int64 fields as
// {"$long": <n>}; such wrapper objects are in-memory only and are never
// dumped as JSON text.
using WireDoc = nlohmann::ordered_json;

namespace detail {

inline void put_i32le(std::string& out, std::int32_t v) {
    auto u = static_cast<std::uint32_t>(v);
    out.push_back(static_cast<char>(u));
    out.push_back(static_cast<char>(u >> 8));
    out.push_back(static_cast<char>(u >> 16));
    out.push_back(static_cast<char>(u >> 24));
}

inline void put_i64le(std::string& out, std::int64_t v) {
    auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(u >> (8 * i)));
}

inline std::string hex_bytes(const std::string& bytes) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : bytes) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xf]);
    }
    return out;
}

class Cursor {
public:
    explicit Cursor(const std::string& data) : data_(data) {}

    std::uint8_t u8() {
        require(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }

    std::int32_t i32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + i]);
        pos_ += 4;
        return static_cast<std::int32_t>(v);
    }

    std::int64_t i64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + i]);
        pos_ += 8;
        return static_cast<std::int64_t>(v);
    }

    double f64() { return std::bit_cast<double>(static_cast<std::uint64_t>(i64())); }

    std::string cstr() {
        auto end = data_.find('\0', pos_);
        if (end == std::string::npos) throw BsonError("unterminated cstring");
        std::string s = data_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return s;
    }

    std::string bytes(std::size_t n) {
        require(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ >= data_.size(); }

private:
    void require(std::size_t n) const {
        if (pos_ + n > data_.size()) throw BsonError("truncated document");
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode(const WireDoc& doc);

namespace detail {

inline void encode_element(std::string& out, const std::string& name, const WireDoc& v) {
    auto put_name = [&](char type) {
        out.push_back(type);
        out += name;
        out.push_back('\0');
    };
    if (v.is_object()) {
        if (v.size() == 1 && v.contains("$binary_raw") && v["$binary_raw"].is_string()) {
            put_name(0x05);
            std::string bytes = v["$binary_raw"].get<std::string>();
            put_i32le(out, static_cast<std::int32_t>(bytes.size()));
            out.push_back('\0');  // subtype 0: generic
            out += bytes;
            return;
        }
        // Forced int64 for fields whose BSON type is fixed (cursor ids).
        if (v.size() == 1 && v.contains("$long") && v["$long"].is_number_integer()) {
            put_name(0x12);
            put_i64le(out, v["$long"].get<std::int64_t>());
            return;
        }
        put_name(0x03);
        out += encode(v);
        return;
    }
    if (v.is_array()) {
        put_name(0x04);
        WireDoc as_doc = WireDoc::object();
        for (std::size_t i = 0; i < v.size(); ++i) as_doc[std::to_string(i)] = v[i];
        out += encode(as_doc);
        return;
    }
    if (v.is_string()) {
        put_name(0x02);
        const auto& s = v.get_ref<const std::string&>();
        put_i32le(out, static_cast<std::int32_t>(s.size() + 1));
        out += s;
        out.push_back('\0');
        return;
    }
    if (v.is_boolean()) {
        put_name(0x08);
        out.push_back(v.get<bool>() ? '\x01' : '\x00');
        return;
    }
    if (v.is_null()) {
        put_name(0x0a);
        return;
    }
    if (v.is_number_float()) {
        put_name(0x01);
        put_i64le(out, static_cast<std::int64_t>(std::bit_cast<std::uint64_t>(v.get<double>())));
        return;
    }
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > std::uint64_t{INT64_MAX})
        throw BsonError("integer out of int64 range: " + name);
    if (v.is_number_integer() || v.is_number_unsigned()) {
        std::int64_t x = v.get<std::int64_t>();
        if (x >= INT32_MIN && x <= INT32_MAX) {
            put_name(0x10);
            put_i32le(out, static_cast<std::int32_t>(x));
        } else {
            put_name(0x12);
            put_i64le(out, x);
        }
        return;
    }
    throw BsonError("unsupported value for element " + name);
}

}  // namespace detail

inline std::string encode(const WireDoc& doc) {
    if (!doc.is_object()) throw BsonError("top-level value must be a document");
    std::string body;
    for (const auto& [name, value] : doc.items()) detail::encode_element(body, name, value);
    std::string out;
    detail::put_i32le(out, static_cast<std::int32_t>(body.size() + 5));
    out += body;
    out.push_back('\0');
    return out;
}

namespace detail {

inline WireDoc decode_document(Cursor& c) {
    std::int32_t len = c.i32();
    if (len < 5) throw BsonError("implausible document length");
    std::size_t end = c.pos() + static_cast<std::size_t>(len) - 4;
    WireDoc out = WireDoc::object();
    for (;;) {
        std::uint8_t type = c.u8();
        if (type == 0) break;
        std::string name = c.cstr();
        switch (type) {
            case 0x01: out[name] = c.f64(); break;
            case 0x02: {
                std::int32_t slen = c.i32();
                if (slen < 1) throw BsonError("implausible string length");
                std::string s = c.bytes(static_cast<std::size_t>(slen));
                if (s.back() != '\0') throw BsonError("unterminated string value");
                s.pop_back();
                out[name] = std::move(s);
                break;
            }
            case 0x03: out[name] = decode_document(c); break;
            case 0x04: {
                WireDoc as_doc = decode_document(c);
                WireDoc arr = WireDoc::array();
                for (const auto& [k, v] : as_doc.items()) arr.push_back(v);
                out[name] = std::move(arr);
                break;
            }
            case 0x05: {
                std::int32_t blen = c.i32();
                if (blen < 0) throw BsonError("implausible binary length");
                std::uint8_t subtype = c.u8();
                WireDoc b = {{"$binary_raw", c.bytes(static_cast<std::size_t>(blen))}};
                if (subtype != 0) b["$subtype"] = subtype;
                out[name] = std::move(b);
                break;
            }
            case 0x06: out[name] = nullptr; break;
            case 0x07: out[name] = WireDoc{{"$oid", hex_bytes(c.bytes(12))}}; break;
            case 0x08: {
                std::uint8_t b = c.u8();
                if (b > 1) throw BsonError("invalid boolean byte");
                out[name] = (b == 1);
                break;
            }
            case 0x09: out[name] = WireDoc{{"$date", c.i64()}}; break;
            case 0x0a: out[name] = nullptr; break;
            case 0x0b: {
                std::string pattern = c.cstr();
                std::string options = c.cstr();
                out[name] = WireDoc{{"$regex", pattern}, {"$options", options}};
                break;
            }
            case 0x10: out[name] = c.i32(); break;
            case 0x11: out[name] = WireDoc{{"$timestamp", static_cast<std::uint64_t>(c.i64())}}; break;
            case 0x12: out[name] = c.i64(); break;
            case 0x13: out[name] = WireDoc{{"$decimal128_bytes", hex_bytes(c.bytes(16))}}; break;
            default:
                throw BsonError("unsupported bson type " + std::to_string(type) + " for element " +
                                name);
        }
    }
    if (c.pos() != end) throw BsonError("document length mismatch");
    return out;
}

}  // namespace detail

inline WireDoc decode(const std::string& data) {
    detail::Cursor c(data);
    WireDoc doc = detail::decode_document(c);
    if (!c.done()) throw BsonError("trailing bytes after document");
    return doc;
}

}  // namespace teiresias::retrieval::bson
