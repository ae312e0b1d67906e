#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "teiresias/netio.hpp"
#include "teiresias/scram.hpp"

namespace teiresias::retrieval::pg {

class PgError : public std::runtime_error {
public:
    PgError(std::string severity, std::string code, const std::string& message)
        : std::runtime_error(message + " (" + severity + " " + code + ")"),
          severity_(std::move(severity)),
          code_(std::move(code)) {}
    explicit PgError(const std::string& message) : std::runtime_error(message) {}
    const std::string& severity() const { return severity_; }
    const std::string& code() const { return code_; }

private:
    std::string severity_;
    std::string code_;
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v >> 24));
    buf.push_back(static_cast<char>(v >> 16));
    buf.push_back(static_cast<char>(v >> 8));
    buf.push_back(static_cast<char>(v));
}

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v >> 8));
    buf.push_back(static_cast<char>(v));
}

inline void put_cstr(std::string& buf, const std::string& s) {
    buf += s;
    buf.push_back('\0');
}

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}

    std::uint32_t u32() {
        require(4);
        auto b = [&](std::size_t i) { return static_cast<std::uint8_t>(data_[pos_ + i]); };
        std::uint32_t v = (std::uint32_t(b(0)) << 24) | (std::uint32_t(b(1)) << 16) |
                          (std::uint32_t(b(2)) << 8) | b(3);
        pos_ += 4;
        return v;
    }

    std::uint16_t u16() {
        require(2);
        auto b = [&](std::size_t i) { return static_cast<std::uint8_t>(data_[pos_ + i]); };
        std::uint16_t v = static_cast<std::uint16_t>((b(0) << 8) | b(1));
        pos_ += 2;
        return v;
    }

    char byte() {
        require(1);
        return data_[pos_++];
    }

    std::string cstr() {
        auto end = data_.find('\0', pos_);
        if (end == std::string::npos) throw PgError("unterminated string in message");
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

    std::string rest() { return data_.substr(pos_); }
    bool done() const { return pos_ >= data_.size(); }

private:
    void require(std::size_t n) const {
        if (pos_ + n > data_.size()) throw PgError("truncated message");
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

inline std::string md5_hex(const std::string& data) {
    unsigned char buf[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data.data(), data.size(), buf, &len, EVP_md5(), nullptr))
        throw PgError("md5 unavailable");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[buf[i] >> 4]);
        out.push_back(hex[buf[i] & 0xf]);
    }
    return out;
}

// "md5" + md5(md5(password + user) + salt), all hex on the inner layers.
inline std::string md5_password(const std::string& user, const std::string& password,
                                const std::string& salt) {
    return "md5" + md5_hex(md5_hex(password + user) + salt);
}

}  // namespace detail

struct PgField {
    std::string name;
    std::uint32_t type_oid = 0;
};

struct PgResult {
    std::vector<PgField> fields;
    std::vector<std::vector<std::optional<std::string>>> rows;
    std::string command_tag;
};

// Minimal frontend for protocol 3.0 over plain TCP: startup, cleartext / md5
// / SCRAM-SHA-256 authentication, simple query with text-format results. TLS
// is out of scope (use network isolation or a proxy).
class PgConnection {
public:
    struct Params {
        std::string host;
        int port = 5432;
        std::string database;
        std::string user;
        std::string password;
        int timeout_ms = 5000;
    };

    explicit PgConnection(Params params) : params_(std::move(params)) {
        stream_ = net::TcpStream::connect(params_.host, params_.port, params_.timeout_ms);
        send_startup();
        authenticate();
    }

    PgResult query(const std::string& sql) {
        std::string body;
        detail::put_cstr(body, sql);
        send('Q', body);

        PgResult result;
        std::optional<PgError> error;
        for (;;) {
            auto [type, payload] = read_message();
            detail::Reader r(payload);
            switch (type) {
                case 'T': {
                    std::uint16_t nfields = r.u16();
                    for (std::uint16_t i = 0; i < nfields; ++i) {
                        PgField f;
                        f.name = r.cstr();
                        r.u32();  // table oid
                        r.u16();  // attribute number
                        f.type_oid = r.u32();
                        r.u16();  // type size
                        r.u32();  // type modifier
                        r.u16();  // format code
                        result.fields.push_back(std::move(f));
                    }
                    break;
                }
                case 'D': {
                    std::uint16_t ncols = r.u16();
                    std::vector<std::optional<std::string>> row;
                    for (std::uint16_t i = 0; i < ncols; ++i) {
                        std::uint32_t len = r.u32();
                        if (len == 0xffffffffu)
                            row.push_back(std::nullopt);
                        else
                            row.push_back(r.bytes(len));
                    }
                    result.rows.push_back(std::move(row));
                    break;
                }
                case 'C': result.command_tag = r.cstr(); break;
                case 'E':
                    if (!error) error = parse_error(payload);
                    break;
                case 'N':
                case 'S': break;
                case 'I': break;
                case 'Z':
                    if (error) throw *error;
                    return result;
                default: throw PgError(std::string("unexpected message type '") + type + "'");
            }
        }
    }

    void close() { stream_.close(); }

private:
    void send_startup() {
        std::string body;
        detail::put_u32(body, 196608);  // protocol 3.0
        detail::put_cstr(body, "user");
        detail::put_cstr(body, params_.user);
        detail::put_cstr(body, "database");
        detail::put_cstr(body, params_.database);
        detail::put_cstr(body, "application_name");
        detail::put_cstr(body, "teiresias");
        body.push_back('\0');
        std::string framed;
        detail::put_u32(framed, static_cast<std::uint32_t>(body.size() + 4));
        framed += body;
        stream_.write_all(framed.data(), framed.size());
    }

    void authenticate() {
        std::optional<scram::ClientSession> scram_session;
        for (;;) {
            auto [type, payload] = read_message();
            detail::Reader r(payload);
            switch (type) {
                case 'R': {
                    std::uint32_t code = r.u32();
                    if (code == 0) break;  // authentication ok
                    if (code == 3) {
                        std::string body;
                        detail::put_cstr(body, params_.password);
                        send('p', body);
                    } else if (code == 5) {
                        std::string salt = r.bytes(4);
                        std::string body;
                        detail::put_cstr(body,
                                         detail::md5_password(params_.user, params_.password, salt));
                        send('p', body);
                    } else if (code == 10) {
                        bool supported = false;
                        for (;;) {
                            std::string mech = r.cstr();
                            if (mech.empty()) break;
                            if (mech == "SCRAM-SHA-256") supported = true;
                        }
                        if (!supported)
                            throw PgError("server offers no supported SASL mechanism");
                        scram_session.emplace(EVP_sha256(), params_.user, params_.password);
                        std::string first = scram_session->client_first_message();
                        std::string body;
                        detail::put_cstr(body, "SCRAM-SHA-256");
                        detail::put_u32(body, static_cast<std::uint32_t>(first.size()));
                        body += first;
                        send('p', body);
                    } else if (code == 11) {
                        if (!scram_session) throw PgError("SASL continue without SASL start");
                        std::string final = scram_session->client_final_message(r.rest());
                        send('p', final);
                    } else if (code == 12) {
                        if (!scram_session) throw PgError("SASL final without SASL start");
                        scram_session->verify_server_final(r.rest());
                    } else {
                        throw PgError("unsupported authentication request " +
                                      std::to_string(code));
                    }
                    break;
                }
                case 'E': throw parse_error(payload);
                case 'S':
                case 'K':
                case 'N': break;
                case 'Z': return;
                default: throw PgError(std::string("unexpected message type '") + type + "'");
            }
        }
    }

    void send(char type, const std::string& body) {
        std::string framed(1, type);
        detail::put_u32(framed, static_cast<std::uint32_t>(body.size() + 4));
        framed += body;
        stream_.write_all(framed.data(), framed.size());
    }

    std::pair<char, std::string> read_message() {
        char type = 0;
        stream_.read_exact(&type, 1);
        std::uint8_t lenbuf[4];
        stream_.read_exact(lenbuf, 4);
        std::uint32_t len = (std::uint32_t(lenbuf[0]) << 24) | (std::uint32_t(lenbuf[1]) << 16) |
                            (std::uint32_t(lenbuf[2]) << 8) | lenbuf[3];
        if (len < 4 || len > (64u << 20)) throw PgError("implausible message length");
        return {type, stream_.read_string(len - 4)};
    }

    static PgError parse_error(const std::string& payload) {
        detail::Reader r(payload);
        std::string severity = "ERROR", code = "XX000", message = "unknown error";
        while (!r.done()) {
            char field = r.byte();
            if (field == '\0') break;
            std::string value = r.cstr();
            if (field == 'S') severity = value;
            if (field == 'C') code = value;
            if (field == 'M') message = value;
        }
        return PgError(severity, code, message);
    }

    Params params_;
    net::TcpStream stream_;
};

}  // namespace teiresias::retrieval::pg
