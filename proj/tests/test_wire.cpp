#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <mutex>
#include <thread>

#include "teiresias/bson.hpp"
#include "teiresias/classify.hpp"
#include "teiresias/mongo_adapter.hpp"
#include "teiresias/mongowire.hpp"
#include "teiresias/netio.hpp"
#include "teiresias/pg_adapter.hpp"
#include "teiresias/pgwire.hpp"
#include "teiresias/scram.hpp"

using namespace teiresias;
using namespace teiresias::retrieval;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string unhex(const std::string& hex) {
    REQUIRE(hex.size() % 2 == 0);
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return c - 'A' + 10;
    };
    std::string out;
    for (std::size_t i = 0; i < hex.size(); i += 2)
        out.push_back(static_cast<char>((nibble(hex[i]) << 4) | nibble(hex[i + 1])));
    return out;
}

std::string hex(const std::string& bytes) { return bson::detail::hex_bytes(bytes); }

}  // namespace

TEST_CASE("scram sha-1 exchange matches the published vector", "[scram]") {
    scram::ClientSession c(EVP_sha1(), "user", "pencil", "fyko+d2lbbFgONRv9qkxdawL");
    CHECK(c.client_first_message() == "n,,n=user,r=fyko+d2lbbFgONRv9qkxdawL");
    std::string final = c.client_final_message(
        "r=fyko+d2lbbFgONRv9qkxdawL3rfcNHYJY1ZVvWVs7j,s=QSXCR+Q6sek8bf92,i=4096");
    CHECK(final ==
          "c=biws,r=fyko+d2lbbFgONRv9qkxdawL3rfcNHYJY1ZVvWVs7j,p=v0X8v3Bz2T0CJGbJQyF0X+HI4Ts=");
    CHECK_NOTHROW(c.verify_server_final("v=rmF9pqV8S7suAoZWja4dJRkFsKQ="));
}

TEST_CASE("scram sha-256 exchange matches the published vector", "[scram]") {
    scram::ClientSession c(EVP_sha256(), "user", "pencil", "rOprNGfwEbeRWgbNEkqO");
    CHECK(c.client_first_message() == "n,,n=user,r=rOprNGfwEbeRWgbNEkqO");
    std::string final = c.client_final_message(
        "r=rOprNGfwEbeRWgbNEkqO%hvYDpWUa2RaTCAfuxFIlj)hNlF$k0,s=W22ZaJ0SNY7soEsUEjb6gQ==,i=4096");
    CHECK(final == "c=biws,r=rOprNGfwEbeRWgbNEkqO%hvYDpWUa2RaTCAfuxFIlj)hNlF$k0,"
                   "p=dHzbZapWIk4jUhN+Ute9ytag9zjfMHgsqmmiz7AndVQ=");
    CHECK_NOTHROW(c.verify_server_final("v=6rriTRBi23WpRR/wtup+mMhUZUn/dB5nLTJRsjl95G4="));
}

TEST_CASE("scram client rejects defective server messages", "[scram]") {
    auto fresh = [] {
        return scram::ClientSession(EVP_sha256(), "user", "pencil", "rOprNGfwEbeRWgbNEkqO");
    };
    std::string good_first =
        "r=rOprNGfwEbeRWgbNEkqO%hvYDpWUa2RaTCAfuxFIlj)hNlF$k0,s=W22ZaJ0SNY7soEsUEjb6gQ==,i=4096";

    SECTION("tampered server signature") {
        auto c = fresh();
        c.client_final_message(good_first);
        CHECK_THROWS_WITH(c.verify_server_final("v=7rriTRBi23WpRR/wtup+mMhUZUn/dB5nLTJRsjl95G4="),
                          ContainsSubstring("signature mismatch"));
    }
    SECTION("server error reply") {
        auto c = fresh();
        c.client_final_message(good_first);
        CHECK_THROWS_WITH(c.verify_server_final("e=invalid-proof"),
                          ContainsSubstring("server rejected credentials"));
    }
    SECTION("verify before exchange") {
        auto c = fresh();
        CHECK_THROWS_AS(c.verify_server_final("v=AAAA"), scram::ScramError);
    }
    SECTION("missing salt") {
        CHECK_THROWS_WITH(fresh().client_final_message("r=rOprNGfwEbeRWgbNEkqOabc,i=4096"),
                          ContainsSubstring("lacks r/s/i"));
    }
    SECTION("foreign nonce") {
        CHECK_THROWS_WITH(
            fresh().client_final_message("r=completelydifferent,s=W22ZaJ0SNY7soEsUEjb6gQ==,i=4096"),
            ContainsSubstring("does not extend"));
    }
    SECTION("nonce without added entropy") {
        CHECK_THROWS_WITH(
            fresh().client_final_message("r=rOprNGfwEbeRWgbNEkqO,s=W22ZaJ0SNY7soEsUEjb6gQ==,i=4096"),
            ContainsSubstring("no entropy"));
    }
    SECTION("non-positive iteration count") {
        CHECK_THROWS_WITH(
            fresh().client_final_message(
                "r=rOprNGfwEbeRWgbNEkqOabc,s=W22ZaJ0SNY7soEsUEjb6gQ==,i=0"),
            ContainsSubstring("iteration count"));
    }
}

TEST_CASE("scram server fixture completes a round trip and rejects bad proofs", "[scram]") {
    SECTION("matching password") {
        scram::ServerSession server(EVP_sha256(), "sekret");
        scram::ClientSession client(EVP_sha256(), "dana", "sekret");
        auto server_first = server.server_first_message(client.client_first_message());
        auto client_final = client.client_final_message(server_first);
        CHECK_NOTHROW(client.verify_server_final(server.server_final_message(client_final)));
    }
    SECTION("wrong password") {
        scram::ServerSession server(EVP_sha256(), "sekret");
        scram::ClientSession client(EVP_sha256(), "dana", "hunter2");
        auto server_first = server.server_first_message(client.client_first_message());
        CHECK_THROWS_WITH(server.server_final_message(client.client_final_message(server_first)),
                          ContainsSubstring("proof mismatch"));
    }
    SECTION("username escaping round trip") {
        scram::ClientSession client(EVP_sha256(), "a=b,c", "pw", "nonce0");
        CHECK(client.client_first_message() == "n,,n=a=3Db=2Cc,r=nonce0");
    }
}

TEST_CASE("postgres md5 response matches the frozen digest", "[pgwire]") {
    CHECK(pg::detail::md5_password("admin", "adminpw", std::string("\x01\x02\x03\x04", 4)) ==
          "md59358fd15f0d86237e0b41813d7292bf2");
}

TEST_CASE("bson codec reproduces canonical byte vectors", "[bson]") {
    SECTION("simple document") {
        bson::WireDoc doc{{"hello", "world"}};
        std::string bytes = bson::encode(doc);
        CHECK(hex(bytes) == "160000000268656c6c6f0006000000776f726c640000");
        CHECK(bson::decode(bytes) == doc);
    }
    SECTION("array with mixed scalars") {
        bson::WireDoc doc{{"BSON", {"awesome", 5.05, 1986}}};
        std::string bytes = bson::encode(doc);
        CHECK(hex(bytes) ==
              "310000000442534f4e002600000002300008000000617765736f6d65000131"
              "003333333333331440103200c20700000000");
        CHECK(bson::decode(bytes) == doc);
    }
}

TEST_CASE("bson codec round-trips the supported type set", "[bson]") {
    bson::WireDoc doc{{"s", "text"},
                      {"i", 7},
                      {"big", std::int64_t{1} << 40},
                      {"f", 2.5},
                      {"b", true},
                      {"z", nullptr},
                      {"nested", bson::WireDoc{{"k", "v"}}},
                      {"arr", {1, "two", false}}};
    CHECK(bson::decode(bson::encode(doc)) == doc);
}

TEST_CASE("bson decoder handles engine-side types and malformed input", "[bson]") {
    SECTION("objectid") {
        std::string bytes = unhex("140000") + unhex("00") + unhex("07") + "a" +
                            std::string(1, '\0') + unhex("000102030405060708090a0b") +
                            std::string(1, '\0');
        auto doc = bson::decode(bytes);
        CHECK(doc["a"] == bson::WireDoc{{"$oid", "000102030405060708090a0b"}});
    }
    SECTION("binary") {
        bson::WireDoc doc{{"p", bson::WireDoc{{"$binary_raw", "n,,n=user,r=abc"}}}};
        auto back = bson::decode(bson::encode(doc));
        CHECK(back["p"]["$binary_raw"] == "n,,n=user,r=abc");
    }
    SECTION("forced int64") {
        bson::WireDoc doc{{"getMore", bson::WireDoc{{"$long", 99}}}};
        std::string bytes = bson::encode(doc);
        // type 0x12 even though the value fits int32
        CHECK(bytes[4] == 0x12);
        CHECK(bson::decode(bytes)["getMore"] == 99);
    }
    SECTION("utc datetime and timestamp") {
        std::string body;
        bson::detail::put_i32le(body, 0);  // placeholder
        body.push_back(0x09);
        body += "d";
        body.push_back('\0');
        bson::detail::put_i64le(body, 1723800000000);
        body.push_back('\0');
        std::string sized;
        bson::detail::put_i32le(sized, static_cast<std::int32_t>(body.size()));
        sized += body.substr(4);
        auto doc = bson::decode(sized);
        CHECK(doc["d"] == bson::WireDoc{{"$date", 1723800000000}});
    }
    SECTION("truncated document") {
        std::string bytes = bson::encode(bson::WireDoc{{"hello", "world"}});
        CHECK_THROWS_AS(bson::decode(bytes.substr(0, bytes.size() - 3)), bson::BsonError);
    }
    SECTION("trailing bytes") {
        std::string bytes = bson::encode(bson::WireDoc{{"hello", "world"}}) + "x";
        CHECK_THROWS_AS(bson::decode(bytes), bson::BsonError);
    }
    SECTION("length mismatch") {
        std::string bytes = bson::encode(bson::WireDoc{{"hello", "world"}});
        bytes[0] = static_cast<char>(bytes[0] + 1);
        CHECK_THROWS_AS(bson::decode(bytes + "\0"), bson::BsonError);
    }
}

namespace {

// Backend side of the v3 protocol for loopback fixtures: one auth mode, a
// canned sql → result map, everything else answered with an error response.
class MockPg {
public:
    enum class Auth { trust, cleartext, md5, scram };

    struct Canned {
        pg::PgResult result;
        std::string error_code;  // non-empty: reply with an error instead
        std::string error_message;
    };

    MockPg(Auth auth, std::string password) : auth_(auth), password_(std::move(password)) {
        thread_ = std::thread([this] { serve(); });
    }

    ~MockPg() {
        listener_.shutdown();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return listener_.port(); }

    void can(const std::string& sql, pg::PgResult result) {
        std::lock_guard lock(mutex_);
        canned_[sql] = {std::move(result), "", ""};
    }

    void fail(const std::string& sql, std::string code, std::string message) {
        std::lock_guard lock(mutex_);
        canned_[sql] = {{}, std::move(code), std::move(message)};
    }

    std::vector<std::string> queries() const {
        std::lock_guard lock(mutex_);
        return queries_;
    }

private:
    void serve() {
        try {
            for (;;) {
                auto s = listener_.accept();
                try {
                    handle(s);
                } catch (const std::exception&) {
                }
            }
        } catch (const std::exception&) {
        }
    }

    static void send_msg(net::TcpStream& s, char type, const std::string& body) {
        std::string framed(1, type);
        pg::detail::put_u32(framed, static_cast<std::uint32_t>(body.size() + 4));
        framed += body;
        s.write_all(framed.data(), framed.size());
    }

    static std::pair<char, std::string> read_msg(net::TcpStream& s) {
        char type = 0;
        s.read_exact(&type, 1);
        std::uint8_t lenbuf[4];
        s.read_exact(lenbuf, 4);
        std::uint32_t len = (std::uint32_t(lenbuf[0]) << 24) | (std::uint32_t(lenbuf[1]) << 16) |
                            (std::uint32_t(lenbuf[2]) << 8) | lenbuf[3];
        return {type, s.read_string(len - 4)};
    }

    static void send_auth(net::TcpStream& s, std::uint32_t code, const std::string& extra = "") {
        std::string body;
        pg::detail::put_u32(body, code);
        body += extra;
        send_msg(s, 'R', body);
    }

    static void send_error(net::TcpStream& s, const std::string& code, const std::string& message) {
        std::string body;
        body.push_back('S');
        pg::detail::put_cstr(body, "ERROR");
        body.push_back('C');
        pg::detail::put_cstr(body, code);
        body.push_back('M');
        pg::detail::put_cstr(body, message);
        body.push_back('\0');
        send_msg(s, 'E', body);
    }

    static void send_ready(net::TcpStream& s) { send_msg(s, 'Z', "I"); }

    void handle(net::TcpStream& s) {
        std::uint8_t lenbuf[4];
        s.read_exact(lenbuf, 4);
        std::uint32_t len = (std::uint32_t(lenbuf[0]) << 24) | (std::uint32_t(lenbuf[1]) << 16) |
                            (std::uint32_t(lenbuf[2]) << 8) | lenbuf[3];
        std::string startup = s.read_string(len - 4);
        pg::detail::Reader reader(startup);
        if (reader.u32() != 196608) return;
        std::string user;
        for (;;) {
            std::string key = reader.cstr();
            if (key.empty()) break;
            std::string value = reader.cstr();
            if (key == "user") user = value;
        }

        if (!authenticate(s, user)) return;
        std::string params;
        pg::detail::put_cstr(params, "server_version");
        pg::detail::put_cstr(params, "14.11");
        send_msg(s, 'S', params);
        send_msg(s, 'K', std::string(8, '\0'));
        send_ready(s);

        for (;;) {
            auto [type, payload] = read_msg(s);
            if (type == 'X') return;
            if (type != 'Q') continue;
            pg::detail::Reader q(payload);
            std::string sql = q.cstr();
            Canned canned;
            bool found = false;
            {
                std::lock_guard lock(mutex_);
                queries_.push_back(sql);
                auto it = canned_.find(sql);
                if (it != canned_.end()) {
                    canned = it->second;
                    found = true;
                }
            }
            if (!found) {
                send_error(s, "42P01", "no canned result for: " + sql);
            } else if (!canned.error_code.empty()) {
                send_error(s, canned.error_code, canned.error_message);
            } else {
                send_result(s, canned.result);
            }
            send_ready(s);
        }
    }

    bool authenticate(net::TcpStream& s, const std::string& user) {
        switch (auth_) {
            case Auth::trust: break;
            case Auth::cleartext: {
                send_auth(s, 3);
                auto [type, payload] = read_msg(s);
                pg::detail::Reader r(payload);
                if (type != 'p' || r.cstr() != password_) {
                    send_error(s, "28P01", "password authentication failed for user \"" + user + "\"");
                    return false;
                }
                break;
            }
            case Auth::md5: {
                std::string salt("\x01\x02\x03\x04", 4);
                send_auth(s, 5, salt);
                auto [type, payload] = read_msg(s);
                pg::detail::Reader r(payload);
                if (type != 'p' || r.cstr() != pg::detail::md5_password(user, password_, salt)) {
                    send_error(s, "28P01", "password authentication failed for user \"" + user + "\"");
                    return false;
                }
                break;
            }
            case Auth::scram: {
                std::string mechs;
                pg::detail::put_cstr(mechs, "SCRAM-SHA-256");
                mechs.push_back('\0');
                send_auth(s, 10, mechs);
                auto [t1, p1] = read_msg(s);
                pg::detail::Reader r1(p1);
                if (t1 != 'p' || r1.cstr() != "SCRAM-SHA-256") return false;
                std::uint32_t n = r1.u32();
                std::string client_first = r1.bytes(n);
                scram::ServerSession server(EVP_sha256(), password_);
                send_auth(s, 11, server.server_first_message(client_first));
                auto [t2, p2] = read_msg(s);
                if (t2 != 'p') return false;
                try {
                    send_auth(s, 12, server.server_final_message(p2));
                } catch (const scram::ScramError&) {
                    send_error(s, "28P01", "password authentication failed for user \"" + user + "\"");
                    return false;
                }
                break;
            }
        }
        send_auth(s, 0);
        return true;
    }

    static void send_result(net::TcpStream& s, const pg::PgResult& result) {
        if (!result.fields.empty()) {
            std::string body;
            pg::detail::put_u16(body, static_cast<std::uint16_t>(result.fields.size()));
            for (const auto& f : result.fields) {
                pg::detail::put_cstr(body, f.name);
                pg::detail::put_u32(body, 0);
                pg::detail::put_u16(body, 0);
                pg::detail::put_u32(body, f.type_oid);
                pg::detail::put_u16(body, 0xffff);
                pg::detail::put_u32(body, 0xffffffffu);
                pg::detail::put_u16(body, 0);
            }
            send_msg(s, 'T', body);
        }
        for (const auto& row : result.rows) {
            std::string body;
            pg::detail::put_u16(body, static_cast<std::uint16_t>(row.size()));
            for (const auto& cell : row) {
                if (!cell) {
                    pg::detail::put_u32(body, 0xffffffffu);
                } else {
                    pg::detail::put_u32(body, static_cast<std::uint32_t>(cell->size()));
                    body += *cell;
                }
            }
            send_msg(s, 'D', body);
        }
        std::string tag;
        pg::detail::put_cstr(tag, "SELECT " + std::to_string(result.rows.size()));
        send_msg(s, 'C', tag);
    }

    net::TcpListener listener_;
    std::thread thread_;
    Auth auth_;
    std::string password_;
    mutable std::mutex mutex_;
    std::map<std::string, Canned> canned_;
    std::vector<std::string> queries_;
};

pg::PgResult make_result(std::vector<std::string> names,
                         std::vector<std::vector<std::optional<std::string>>> rows,
                         std::uint32_t type_oid = 25) {
    pg::PgResult r;
    for (auto& n : names) r.fields.push_back({std::move(n), type_oid});
    r.rows = std::move(rows);
    return r;
}

pg::PgConnection::Params pg_params(int port, const std::string& password) {
    pg::PgConnection::Params p;
    p.host = "127.0.0.1";
    p.port = port;
    p.database = "app";
    p.user = "svc";
    p.password = password;
    return p;
}

ConnectionDescriptor net_descriptor(const std::string& type, int port) {
    ConnectionDescriptor d;
    d.storage_type = type;
    d.host = Field::of("127.0.0.1");
    d.port = Field::of(std::to_string(port));
    d.database = Field::of("app");
    d.username = Field::of("svc");
    d.password = Field::of("sekret");
    d.source = {"wire-test", type};
    return d;
}

}  // namespace

TEST_CASE("pg client authenticates and runs simple queries", "[pgwire]") {
    SECTION("trust") {
        MockPg mock(MockPg::Auth::trust, "");
        mock.can("SELECT 1", make_result({"?column?"}, {{"1"}}, 23));
        pg::PgConnection conn(pg_params(mock.port(), ""));
        auto r = conn.query("SELECT 1");
        REQUIRE(r.fields.size() == 1);
        CHECK(r.fields[0].type_oid == 23);
        REQUIRE(r.rows.size() == 1);
        CHECK(r.rows[0][0] == "1");
        CHECK(r.command_tag == "SELECT 1");
    }
    SECTION("cleartext") {
        MockPg mock(MockPg::Auth::cleartext, "sekret");
        mock.can("SELECT 1", make_result({"?column?"}, {{"1"}}, 23));
        pg::PgConnection conn(pg_params(mock.port(), "sekret"));
        CHECK(conn.query("SELECT 1").rows.size() == 1);
    }
    SECTION("md5") {
        MockPg mock(MockPg::Auth::md5, "sekret");
        mock.can("SELECT 1", make_result({"?column?"}, {{"1"}}, 23));
        pg::PgConnection conn(pg_params(mock.port(), "sekret"));
        CHECK(conn.query("SELECT 1").rows.size() == 1);
    }
    SECTION("scram-sha-256") {
        MockPg mock(MockPg::Auth::scram, "sekret");
        mock.can("SELECT 1", make_result({"?column?"}, {{"1"}}, 23));
        pg::PgConnection conn(pg_params(mock.port(), "sekret"));
        CHECK(conn.query("SELECT 1").rows.size() == 1);
    }
    SECTION("scram with wrong password fails") {
        MockPg mock(MockPg::Auth::scram, "sekret");
        CHECK_THROWS_WITH(pg::PgConnection(pg_params(mock.port(), "hunter2")),
                          ContainsSubstring("authentication failed"));
    }
    SECTION("cleartext with wrong password fails") {
        MockPg mock(MockPg::Auth::cleartext, "sekret");
        CHECK_THROWS_WITH(pg::PgConnection(pg_params(mock.port(), "hunter2")),
                          ContainsSubstring("authentication failed"));
    }
    SECTION("null values come back as nullopt") {
        MockPg mock(MockPg::Auth::trust, "");
        mock.can("SELECT NULL", make_result({"v"}, {{std::nullopt}}));
        pg::PgConnection conn(pg_params(mock.port(), ""));
        auto r = conn.query("SELECT NULL");
        REQUIRE(r.rows.size() == 1);
        CHECK_FALSE(r.rows[0][0].has_value());
    }
    SECTION("error responses surface as exceptions with the sqlstate") {
        MockPg mock(MockPg::Auth::trust, "");
        pg::PgConnection conn(pg_params(mock.port(), ""));
        try {
            conn.query("SELECT * FROM missing");
            FAIL("expected PgError");
        } catch (const pg::PgError& e) {
            CHECK(e.code() == "42P01");
            CHECK_THAT(e.what(), ContainsSubstring("no canned result"));
        }
        // the connection survives an error and stays usable
        mock.can("SELECT 2", make_result({"v"}, {{"2"}}));
        CHECK(conn.query("SELECT 2").rows.size() == 1);
    }
    SECTION("connection refused") {
        int dead_port;
        {
            net::TcpListener probe;
            dead_port = probe.port();
        }
        CHECK_THROWS_AS(pg::PgConnection(pg_params(dead_port, "")), net::NetError);
    }
}

namespace {

struct PgFixture {
    MockPg mock{MockPg::Auth::scram, "sekret"};

    static constexpr const char* kListSql =
        "SELECT table_schema, table_name FROM information_schema.tables "
        "WHERE table_type = 'BASE TABLE' "
        "AND table_schema NOT IN ('pg_catalog', 'information_schema') "
        "ORDER BY table_schema, table_name";
    static constexpr const char* kColumnsSql =
        "SELECT column_name, data_type FROM information_schema.columns "
        "WHERE table_schema = 'public' AND table_name = 'users' ORDER BY ordinal_position";
    static constexpr const char* kPkSql =
        "SELECT a.attname FROM pg_index i "
        "JOIN pg_class c ON c.oid = i.indrelid "
        "JOIN pg_namespace n ON n.oid = c.relnamespace "
        "JOIN pg_attribute a ON a.attrelid = i.indrelid AND a.attnum = ANY(i.indkey) "
        "WHERE i.indisprimary AND n.nspname = 'public' AND c.relname = 'users' "
        "ORDER BY array_position(i.indkey, a.attnum)";

    PgFixture() {
        mock.can(kListSql, make_result({"table_schema", "table_name"},
                                       {{"public", "events"}, {"public", "users"}}));
        mock.can(kColumnsSql, make_result({"column_name", "data_type"},
                                          {{"id", "integer"}, {"email", "text"}, {"last_ip", "inet"}}));
        mock.can("SELECT count(*) FROM \"public\".\"users\"", make_result({"count"}, {{"50000"}}, 20));
        mock.can(kPkSql, make_result({"attname"}, {{"id"}}));
        mock.can("SELECT * FROM \"public\".\"users\" ORDER BY \"id\" LIMIT 3",
                 make_result({"id", "email", "last_ip"},
                             {{"1", "alice@example.com", "10.0.0.1"},
                              {"2", "bob@example.com", "10.0.0.2"},
                              {"3", std::nullopt, "10.0.0.3"}}));
    }

    std::shared_ptr<StorageSession> open() {
        PgAdapter adapter;
        return adapter.connect(net_descriptor("postgresql", mock.port()));
    }
};

}  // namespace

TEST_CASE("pg session maps catalog and rows onto collection profiles", "[pg-adapter]") {
    PgFixture fx;
    auto session = fx.open();

    CHECK(session->capabilities().supports_in_place_regex);
    CHECK(session->capabilities().supports_count);
    CHECK(session->list_collections() ==
          std::vector<std::string>{"public.events", "public.users"});

    auto profile = session->profile("public.users", {3, "head", 0});
    CHECK(profile.collection == "public.users");
    CHECK(profile.n == 50000);
    CHECK(profile.n_exact);
    REQUIRE(profile.attributes.size() == 3);
    CHECK(profile.attributes[0].name == "id");
    CHECK(profile.attributes[1].name == "email");
    CHECK(profile.attributes[2].name == "last_ip");
    CHECK(profile.attributes[2].declared_type == "inet");
    REQUIRE(profile.attributes[2].type_indicator.has_value());
    CHECK(*profile.attributes[2].type_indicator == "ip");
    REQUIRE(profile.sample.size() == 3);
    CHECK(profile.sample[0].ref == "id:1");
    CHECK(profile.sample[0].values.at("email") == std::vector<std::string>{"alice@example.com"});
    CHECK(profile.sample[2].values.at("email") == std::vector<std::string>{""});
}

TEST_CASE("pg session counts matches storage-side", "[pg-adapter]") {
    PgFixture fx;
    auto patterns = analysis::PatternTable::defaults();
    const auto* email = patterns.find("email");
    REQUIRE(email != nullptr);
    std::string re = email->regex_for(analysis::RegexDialect::postgres);
    CHECK_THAT(re, ContainsSubstring("\\y"));

    std::string count_sql =
        "SELECT count(*) FROM \"public\".\"users\" WHERE \"email\"::text ~ '" + re + "'";
    std::string refs_sql = "SELECT 'id:' || \"id\"::text FROM \"public\".\"users\" WHERE "
                           "\"email\"::text ~ '" + re + "' LIMIT 100";
    fx.mock.can(count_sql, make_result({"count"}, {{"4321"}}, 20));
    fx.mock.can(refs_sql, make_result({"ref"}, {{"id:1"}, {"id:2"}}));

    auto session = fx.open();
    auto r = session->count_matches("public.users", "email", *email, 100);
    CHECK_FALSE(r.engine_rejected);
    CHECK(r.count == 4321);
    CHECK(r.refs == std::vector<std::string>{"id:1", "id:2"});

    auto queries = fx.mock.queries();
    CHECK(std::count(queries.begin(), queries.end(), count_sql) == 1);
    CHECK(std::count(queries.begin(), queries.end(), refs_sql) == 1);
}

TEST_CASE("pg session degrades to the sample path when the engine rejects a regex",
          "[pg-adapter]") {
    PgFixture fx;
    auto patterns = analysis::PatternTable::defaults();
    const auto* email = patterns.find("email");
    std::string re = email->regex_for(analysis::RegexDialect::postgres);
    fx.mock.fail("SELECT count(*) FROM \"public\".\"users\" WHERE \"email\"::text ~ '" + re + "'",
                 "2201B", "invalid regular expression");

    auto session = fx.open();
    auto r = session->count_matches("public.users", "email", *email, 100);
    CHECK(r.engine_rejected);
    CHECK(r.count == 0);

    // a genuine engine fault is not a rejection: it must propagate
    fx.mock.fail("SELECT count(*) FROM \"public\".\"events\" WHERE \"email\"::text ~ '" + re + "'",
                 "57P01", "terminating connection");
    CHECK_THROWS_AS(session->count_matches("public.events", "email", *email, 100), pg::PgError);
}

TEST_CASE("pg session without a primary key falls back to row indexes", "[pg-adapter]") {
    MockPg mock(MockPg::Auth::trust, "");
    mock.can("SELECT column_name, data_type FROM information_schema.columns "
             "WHERE table_schema = 'public' AND table_name = 'events' ORDER BY ordinal_position",
             make_result({"column_name", "data_type"}, {{"note", "text"}}));
    mock.can("SELECT count(*) FROM \"public\".\"events\"", make_result({"count"}, {{"2"}}, 20));
    mock.can("SELECT a.attname FROM pg_index i "
             "JOIN pg_class c ON c.oid = i.indrelid "
             "JOIN pg_namespace n ON n.oid = c.relnamespace "
             "JOIN pg_attribute a ON a.attrelid = i.indrelid AND a.attnum = ANY(i.indkey) "
             "WHERE i.indisprimary AND n.nspname = 'public' AND c.relname = 'events' "
             "ORDER BY array_position(i.indkey, a.attnum)",
             make_result({"attname"}, {}));
    mock.can("SELECT * FROM \"public\".\"events\" LIMIT 5",
             make_result({"note"}, {{"a"}, {"b"}}));

    PgAdapter adapter;
    auto session = adapter.connect(net_descriptor("postgresql", mock.port()));
    auto profile = session->profile("public.events", {5, "head", 0});
    REQUIRE(profile.sample.size() == 2);
    CHECK(profile.sample[0].ref == "row:1");
    CHECK(profile.sample[1].ref == "row:2");
}

namespace {

// OP_MSG backend for loopback fixtures: hello and SCRAM-SHA-256 handled in
// the session, everything else dispatched to a per-test handler.
class MockMongo {
public:
    explicit MockMongo(std::string password) : password_(std::move(password)) {
        thread_ = std::thread([this] { serve(); });
    }

    ~MockMongo() {
        listener_.shutdown();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return listener_.port(); }

    void on_command(std::function<bson::WireDoc(const bson::WireDoc&)> handler) {
        std::lock_guard lock(mutex_);
        handler_ = std::move(handler);
    }

    std::vector<bson::WireDoc> commands() const {
        std::lock_guard lock(mutex_);
        return commands_;
    }

private:
    void serve() {
        try {
            for (;;) {
                auto s = listener_.accept();
                try {
                    handle(s);
                } catch (const std::exception&) {
                }
            }
        } catch (const std::exception&) {
        }
    }

    void handle(net::TcpStream& s) {
        std::optional<scram::ServerSession> sasl;
        bool sasl_verified = false;
        for (;;) {
            std::string header = s.read_string(16);
            bson::detail::Cursor h(header);
            std::int32_t total = h.i32();
            std::int32_t request_id = h.i32();
            h.i32();
            if (h.i32() != mongo::kOpMsg) return;
            std::string rest = s.read_string(static_cast<std::size_t>(total) - 16);
            bson::detail::Cursor r(rest);
            r.i32();  // flagBits
            if (r.u8() != 0) return;
            bson::WireDoc cmd = bson::decode(rest.substr(r.pos()));
            std::string name = cmd.begin().key();

            bson::WireDoc reply;
            if (name == "hello") {
                reply = {{"maxWireVersion", 17}, {"ok", 1.0}};
            } else if (name == "saslStart") {
                sasl.emplace(EVP_sha256(), password_);
                std::string client_first = cmd["payload"]["$binary_raw"].get<std::string>();
                reply = {{"conversationId", 1},
                         {"done", false},
                         {"payload", bson::WireDoc{{"$binary_raw",
                                                    sasl->server_first_message(client_first)}}},
                         {"ok", 1.0}};
            } else if (name == "saslContinue") {
                std::string payload = cmd["payload"]["$binary_raw"].get<std::string>();
                if (payload.empty() && sasl_verified) {
                    reply = {{"conversationId", 1},
                             {"done", true},
                             {"payload", bson::WireDoc{{"$binary_raw", ""}}},
                             {"ok", 1.0}};
                } else {
                    try {
                        std::string v = sasl->server_final_message(payload);
                        sasl_verified = true;
                        reply = {{"conversationId", 1},
                                 {"done", false},
                                 {"payload", bson::WireDoc{{"$binary_raw", v}}},
                                 {"ok", 1.0}};
                    } catch (const scram::ScramError&) {
                        reply = {{"ok", 0.0},
                                 {"errmsg", "Authentication failed."},
                                 {"code", 18},
                                 {"codeName", "AuthenticationFailed"}};
                    }
                }
            } else {
                std::function<bson::WireDoc(const bson::WireDoc&)> handler;
                {
                    std::lock_guard lock(mutex_);
                    commands_.push_back(cmd);
                    handler = handler_;
                }
                reply = handler ? handler(cmd)
                                : bson::WireDoc{{"ok", 0.0},
                                                {"errmsg", "no such command"},
                                                {"code", 59}};
            }

            std::string body = bson::encode(reply);
            std::string msg;
            bson::detail::put_i32le(msg, static_cast<std::int32_t>(16 + 4 + 1 + body.size()));
            bson::detail::put_i32le(msg, ++reply_id_);
            bson::detail::put_i32le(msg, request_id);
            bson::detail::put_i32le(msg, mongo::kOpMsg);
            bson::detail::put_i32le(msg, 0);
            msg.push_back('\0');
            msg += body;
            s.write_all(msg.data(), msg.size());
        }
    }

    net::TcpListener listener_;
    std::thread thread_;
    std::string password_;
    mutable std::mutex mutex_;
    std::function<bson::WireDoc(const bson::WireDoc&)> handler_;
    std::vector<bson::WireDoc> commands_;
    std::int32_t reply_id_ = 0;
};

bson::WireDoc cursor_reply(bson::WireDoc batch, const char* key = "firstBatch",
                           std::int64_t cursor_id = 0) {
    return {{"cursor", bson::WireDoc{{"id", bson::WireDoc{{"$long", cursor_id}}},
                                     {"ns", "app.x"},
                                     {key, std::move(batch)}}},
            {"ok", 1.0}};
}

}  // namespace

TEST_CASE("mongo client authenticates with scram-sha-256", "[mongowire]") {
    SECTION("matching password") {
        MockMongo mock("sekret");
        mock.on_command([](const bson::WireDoc&) -> bson::WireDoc {
            return {{"values", {"a"}}, {"ok", 1.0}};
        });
        mongo::MongoConnection::Params params;
        params.host = "127.0.0.1";
        params.port = mock.port();
        params.user = "svc";
        params.password = "sekret";
        mongo::MongoConnection conn(std::move(params));
        auto reply = conn.command("app", bson::WireDoc{{"distinct", "users"}});
        CHECK(reply["values"][0] == "a");
    }
    SECTION("wrong password") {
        MockMongo mock("sekret");
        mongo::MongoConnection::Params params;
        params.host = "127.0.0.1";
        params.port = mock.port();
        params.user = "svc";
        params.password = "hunter2";
        CHECK_THROWS_WITH(mongo::MongoConnection(std::move(params)),
                          ContainsSubstring("Authentication failed"));
    }
    SECTION("command errors carry code and message") {
        MockMongo mock("");
        mock.on_command([](const bson::WireDoc&) -> bson::WireDoc {
            return {{"ok", 0.0}, {"errmsg", "not allowed"}, {"code", 13}, {"codeName", "Unauthorized"}};
        });
        mongo::MongoConnection::Params params;
        params.host = "127.0.0.1";
        params.port = mock.port();
        mongo::MongoConnection conn(std::move(params));
        try {
            conn.command("app", bson::WireDoc{{"find", "users"}});
            FAIL("expected MongoError");
        } catch (const mongo::MongoError& e) {
            CHECK(e.code() == 13);
            CHECK_THAT(e.what(), ContainsSubstring("not allowed"));
        }
    }
}

TEST_CASE("mongo session maps documents onto collection profiles", "[mongo-adapter]") {
    MockMongo mock("sekret");
    mock.on_command([](const bson::WireDoc& cmd) -> bson::WireDoc {
        std::string name = cmd.begin().key();
        if (name == "listCollections")
            return cursor_reply({bson::WireDoc{{"name", "users"}, {"type", "collection"}},
                                 bson::WireDoc{{"name", "events"}, {"type", "collection"}}});
        if (name == "aggregate") return cursor_reply({bson::WireDoc{{"n", 42}}});
        if (name == "find")
            return cursor_reply(
                {bson::WireDoc{{"_id", bson::WireDoc{{"$oid", "64b0c8c2a1b2c3d4e5f60718"}}},
                               {"email", "alice@example.com"},
                               {"tags", {"a", "b"}},
                               {"profile", bson::WireDoc{{"city", "Berlin"}}}},
                 bson::WireDoc{{"_id", "u2"}, {"email", "bob@example.com"}, {"age", 31}}});
        return {{"ok", 0.0}, {"errmsg", "unexpected"}, {"code", 59}};
    });

    MongoAdapter adapter;
    auto session = adapter.connect(net_descriptor("mongodb", mock.port()));
    CHECK(session->capabilities().supports_in_place_regex);
    CHECK(session->list_collections() == std::vector<std::string>{"events", "users"});

    auto profile = session->profile("users", {10, "head", 0});
    CHECK(profile.n == 42);
    CHECK(profile.n_exact);
    REQUIRE(profile.sample.size() == 2);
    CHECK(profile.sample[0].ref == "_id:64b0c8c2a1b2c3d4e5f60718");
    CHECK(profile.sample[1].ref == "_id:u2");
    CHECK(profile.sample[0].values.at("email") == std::vector<std::string>{"alice@example.com"});
    CHECK(profile.sample[0].values.at("tags") == std::vector<std::string>{"a", "b"});
    CHECK(profile.sample[0].values.at("profile.city") == std::vector<std::string>{"Berlin"});

    std::vector<std::string> names;
    for (const auto& a : profile.attributes) names.push_back(a.name);
    CHECK(names == std::vector<std::string>{"_id", "age", "email", "profile.city", "tags"});

    auto aggregates = mock.commands();
    bool counted = false;
    for (const auto& cmd : aggregates)
        if (cmd.begin().key() == "aggregate" && cmd["pipeline"][0].contains("$count"))
            counted = true;
    CHECK(counted);
}

TEST_CASE("mongo session counts matches storage-side", "[mongo-adapter]") {
    MockMongo mock("sekret");
    auto patterns = analysis::PatternTable::defaults();
    const auto* email = patterns.find("email");
    REQUIRE(email != nullptr);
    std::string re = email->regex_for(analysis::RegexDialect::mongo);

    mock.on_command([&](const bson::WireDoc& cmd) -> bson::WireDoc {
        std::string name = cmd.begin().key();
        if (name == "aggregate") {
            const auto& match = cmd["pipeline"][0]["$match"];
            if (match["email"]["$regex"] != re)
                return {{"ok", 0.0}, {"errmsg", "unexpected filter"}, {"code", 59}};
            return cursor_reply({bson::WireDoc{{"n", 7}}});
        }
        if (name == "find") {
            if (cmd["projection"]["_id"] != 1 || cmd["limit"] != 100)
                return {{"ok", 0.0}, {"errmsg", "unexpected find"}, {"code", 59}};
            return cursor_reply({bson::WireDoc{{"_id", "u1"}},
                                 bson::WireDoc{{"_id", bson::WireDoc{{"$oid",
                                                                      "0102030405060708090a0b0c"}}}}});
        }
        return {{"ok", 0.0}, {"errmsg", "unexpected"}, {"code", 59}};
    });

    MongoAdapter adapter;
    auto session = adapter.connect(net_descriptor("mongodb", mock.port()));
    auto r = session->count_matches("users", "email", *email, 100);
    CHECK_FALSE(r.engine_rejected);
    CHECK(r.count == 7);
    CHECK(r.refs == std::vector<std::string>{"_id:u1", "_id:0102030405060708090a0b0c"});
}

TEST_CASE("mongo session degrades on regex rejection and follows cursors", "[mongo-adapter]") {
    SECTION("regex rejected by the engine") {
        MockMongo mock("sekret");
        mock.on_command([](const bson::WireDoc& cmd) -> bson::WireDoc {
            if (cmd.begin().key() == "aggregate")
                return {{"ok", 0.0}, {"errmsg", "Regular expression is invalid"}, {"code", 51091}};
            return {{"ok", 0.0}, {"errmsg", "unexpected"}, {"code", 59}};
        });
        MongoAdapter adapter;
        auto session = adapter.connect(net_descriptor("mongodb", mock.port()));
        auto patterns = analysis::PatternTable::defaults();
        auto r = session->count_matches("users", "email", *patterns.find("email"), 100);
        CHECK(r.engine_rejected);
        CHECK(r.count == 0);
    }
    SECTION("other engine faults propagate") {
        MockMongo mock("sekret");
        mock.on_command([](const bson::WireDoc&) -> bson::WireDoc {
            return {{"ok", 0.0}, {"errmsg", "interrupted"}, {"code", 11601}};
        });
        MongoAdapter adapter;
        auto session = adapter.connect(net_descriptor("mongodb", mock.port()));
        auto patterns = analysis::PatternTable::defaults();
        CHECK_THROWS_AS(session->count_matches("users", "email", *patterns.find("email"), 100),
                        mongo::MongoError);
    }
    SECTION("sample spans getMore batches") {
        MockMongo mock("sekret");
        mock.on_command([](const bson::WireDoc& cmd) -> bson::WireDoc {
            std::string name = cmd.begin().key();
            if (name == "aggregate") return cursor_reply({bson::WireDoc{{"n", 2}}});
            if (name == "find")
                return cursor_reply({bson::WireDoc{{"_id", "a"}, {"v", "1"}}}, "firstBatch", 99);
            if (name == "getMore") {
                if (cmd["getMore"] != 99 || cmd["collection"] != "users")
                    return {{"ok", 0.0}, {"errmsg", "unexpected getMore"}, {"code", 59}};
                return cursor_reply({bson::WireDoc{{"_id", "b"}, {"v", "2"}}}, "nextBatch", 0);
            }
            return {{"ok", 0.0}, {"errmsg", "unexpected"}, {"code", 59}};
        });
        MongoAdapter adapter;
        auto session = adapter.connect(net_descriptor("mongodb", mock.port()));
        auto profile = session->profile("users", {2, "head", 0});
        REQUIRE(profile.sample.size() == 2);
        CHECK(profile.sample[0].ref == "_id:a");
        CHECK(profile.sample[1].ref == "_id:b");
    }
}

TEST_CASE("network sessions feed the shared classification path", "[pg-adapter]") {
    PgFixture fx;
    // n (50000) exceeds the sample limit (3): counting runs storage-side for
    // every engine-evaluable pattern; luhn-validated ones stay sample-side.
    auto patterns = analysis::PatternTable::defaults();
    const auto* email = patterns.find("email");
    std::string re = email->regex_for(analysis::RegexDialect::postgres);
    for (const auto& p : patterns.patterns()) {
        if (!p.engine_evaluable()) continue;
        std::string pre = p.regex_for(analysis::RegexDialect::postgres);
        for (const auto& col : {"id", "email", "last_ip"}) {
            std::string base = "SELECT count(*) FROM \"public\".\"users\" WHERE \"" +
                               std::string(col) + "\"::text ~ '" + pre + "'";
            fx.mock.can(base, make_result({"count"}, {{"0"}}, 20));
        }
    }
    std::string email_count =
        "SELECT count(*) FROM \"public\".\"users\" WHERE \"email\"::text ~ '" + re + "'";
    fx.mock.can(email_count, make_result({"count"}, {{"4999"}}, 20));
    fx.mock.can("SELECT 'id:' || \"id\"::text FROM \"public\".\"users\" WHERE \"email\"::text ~ '" +
                    re + "' LIMIT 100",
                make_result({"ref"}, {{"id:1"}}));

    auto session = fx.open();
    auto profile = session->profile("public.users", {3, "head", 0});
    auto outcome = analysis::data_matches(profile, patterns, session.get());
    CHECK(outcome.total == 4999);
    auto result = analysis::classify(profile, analysis::metadata_proximities(
                                                  profile.attributes,
                                                  analysis::KeywordTable::defaults()),
                                     std::move(outcome));
    CHECK(result.personal);
    CHECK(result.t == 1.0);
    CHECK(result.alpha == 1);
}
