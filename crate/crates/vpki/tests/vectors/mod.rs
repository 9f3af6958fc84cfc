pub const FRAME_ECHO: &str = "";
pub const EMPTY: &str = "";
pub const CERT_AUTHORITY: &str = "";
pub const CERT_PSEUDONYM: &str = "";
pub const CERT_LTC: &str = "";
pub const CSR: &str = "";
pub const TICKET: &str = "";
pub const CRL: &str = "";
pub const ECHO: &str = "";
pub const HEALTH_CHECK_OK: &str = "";
pub const POD_STATS: &str = "";
pub const FAULT_NONE: &str = "";
pub const FAULT_DROP: &str = "";
pub const FAULT_DELAY: &str = "";
pub const FAULT_CRASH: &str = "";
pub const SHUTDOWN: &str = "";
pub const ERROR: &str = "";
pub const REGISTER_VEHICLE_REQ: &str = "";
pub const REGISTER_VEHICLE_OK: &str = "";
pub const ISSUE_TICKET_AUTH_BYTES: &str = "";
pub const ISSUE_TICKET_REQ: &str = "";
pub const ISSUE_TICKET_OK: &str = "";
pub const RESOLVE_TICKET_AUTH_BYTES: &str = "";
pub const RESOLVE_TICKET_REQ: &str = "";
pub const RESOLVE_TICKET_OK: &str = "";
pub const LIST_TICKETS_REQ: &str = "";
pub const LIST_TICKETS_OK: &str = "";
pub const REVOKE_LTC_REQ: &str = "";
pub const LOOKUP_TICKET_REQ: &str = "";
pub const LOOKUP_TICKET_OK: &str = "";
pub const REVOKE_BY_TICKET_REQ: &str = "";
pub const REVOKE_BY_TICKET_OK: &str = "";
pub const ISSUE_PSEUDONYMS_REQ: &str = "";
pub const ISSUE_PSEUDONYMS_OK: &str = "";
pub const GET_CRL_OK: &str = "";
pub const RESOLVE_REQ: &str = "";
pub const RESOLUTION_RESULT: &str = "";
