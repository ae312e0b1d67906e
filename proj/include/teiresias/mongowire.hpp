#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <openssl/evp.h>

#include "teiresias/bson.hpp"
#include "teiresias/netio.hpp"
#include "teiresias/scram.hpp"

namespace teiresias::retrieval::mongo {

class MongoError : public std::runtime_error {
public:
    MongoError(const std::string& message, int code = 0, std::string code_name = "")
        : std::runtime_error(code ? message + " (code " + std::to_string(code) +
                                        (code_name.empty() ? "" : " " + code_name) + ")"
                                  : message),
          code_(code) {}
    int code() const { return code_; }

private:
    int code_ = 0;
};

inline constexpr std::int32_t kOpMsg = 2013;

// OP_MSG client: one kind-0 body section per request and reply, no checksums,
// no exhaust. Authentication is SCRAM-SHA-256 only (SCRAM-SHA-1 needs an md5
// password digest and adds nothing here).
class MongoConnection {
public:
    struct Params {
        std::string host;
        int port = 27017;
        std::string user;
        std::string password;
        std::string auth_db = "admin";
        int timeout_ms = 5000;
    };

    explicit MongoConnection(Params params) : params_(std::move(params)) {
        stream_ = net::TcpStream::connect(params_.host, params_.port, params_.timeout_ms);
        command("admin", bson::WireDoc{{"hello", 1}});
        if (!params_.user.empty()) authenticate();
    }

    // Appends $db and runs the command; throws MongoError unless ok == 1.
    bson::WireDoc command(const std::string& db, bson::WireDoc doc) {
        doc["$db"] = db;
        std::string body = bson::encode(doc);

        std::string msg;
        bson::detail::put_i32le(msg, static_cast<std::int32_t>(16 + 4 + 1 + body.size()));
        bson::detail::put_i32le(msg, ++request_id_);
        bson::detail::put_i32le(msg, 0);  // responseTo
        bson::detail::put_i32le(msg, kOpMsg);
        bson::detail::put_i32le(msg, 0);  // flagBits
        msg.push_back('\0');              // section kind 0
        msg += body;
        stream_.write_all(msg.data(), msg.size());

        std::string header = stream_.read_string(16);
        bson::detail::Cursor h(header);
        std::int32_t total = h.i32();
        h.i32();  // requestID
        h.i32();  // responseTo
        std::int32_t op = h.i32();
        if (op != kOpMsg) throw MongoError("unexpected reply opcode " + std::to_string(op));
        if (total < 16 + 4 + 1 + 5 || total > (48 << 20))
            throw MongoError("implausible reply length");

        std::string rest = stream_.read_string(static_cast<std::size_t>(total) - 16);
        bson::detail::Cursor r(rest);
        std::int32_t flags = r.i32();
        std::size_t tail = (flags & 1) ? 4 : 0;  // checksumPresent
        if (r.u8() != 0) throw MongoError("unexpected section kind in reply");
        bson::WireDoc reply =
            bson::decode(rest.substr(r.pos(), rest.size() - r.pos() - tail));

        double ok = 0.0;
        if (reply.contains("ok") && reply["ok"].is_number()) ok = reply["ok"].get<double>();
        if (ok != 1.0)
            throw MongoError(reply.value("errmsg", std::string("command failed")),
                             reply.value("code", 0), reply.value("codeName", std::string()));
        return reply;
    }

    void close() { stream_.close(); }

private:
    static bson::WireDoc bin(const std::string& bytes) {
        return bson::WireDoc{{"$binary_raw", bytes}};
    }

    static std::string unbin(const bson::WireDoc& v) {
        if (!v.is_object() || !v.contains("$binary_raw"))
            throw MongoError("expected binary payload in sasl reply");
        return v["$binary_raw"].get<std::string>();
    }

    void authenticate() {
        scram::ClientSession session(EVP_sha256(), params_.user, params_.password);
        auto first = command(params_.auth_db,
                             bson::WireDoc{{"saslStart", 1},
                                           {"mechanism", "SCRAM-SHA-256"},
                                           {"payload", bin(session.client_first_message())}});
        auto conversation = first.value("conversationId", 0);
        std::string final = session.client_final_message(unbin(first.at("payload")));
        auto second = command(params_.auth_db, bson::WireDoc{{"saslContinue", 1},
                                                             {"conversationId", conversation},
                                                             {"payload", bin(final)}});
        session.verify_server_final(unbin(second.at("payload")));
        if (!second.value("done", false)) {
            auto third = command(params_.auth_db, bson::WireDoc{{"saslContinue", 1},
                                                                {"conversationId", conversation},
                                                                {"payload", bin("")}});
            if (!third.value("done", false))
                throw MongoError("sasl conversation did not complete");
        }
    }

    Params params_;
    net::TcpStream stream_;
    std::int32_t request_id_ = 0;
};

}  // namespace teiresias::retrieval::mongo
