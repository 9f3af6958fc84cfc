//! Shared fixtures for unit tests: a complete credential domain (root,
//! LTCA, PCA, RA) with keys.

use crate::credentials::{
    authority_tbs, sign_certificate, AuthorityId, Certificate, KeyPair, Validity,
};

pub(crate) struct Domain {
    pub root_key: KeyPair,
    pub root_cert: Certificate,
    pub ltca_key: KeyPair,
    pub ltca_cert: Certificate,
    pub pca_key: KeyPair,
    pub pca_cert: Certificate,
    pub ra_key: KeyPair,
    pub ra_cert: Certificate,
}

impl Domain {
    /// Mints an extra authority certificate under this domain's root, for
    /// tests that need a second PCA or a rogue sibling authority.
    pub(crate) fn issue_authority(&self, id: &str, key: &KeyPair) -> Certificate {
        let validity = Validity::new(0, 1 << 40).unwrap();
        sign_certificate(
            &self.root_key,
            authority_tbs(&AuthorityId::new(id), key.public(), &AuthorityId::new("rca"), validity),
        )
        .unwrap()
    }
}

pub(crate) fn make_domain() -> Domain {
    make_domain_with_pca_id("pca-1")
}

pub(crate) fn make_domain_with_pca_id(pca_id: &str) -> Domain {
    let validity = Validity::new(0, 1 << 40).unwrap();
    let root_id = AuthorityId::new("rca");
    let root_key = KeyPair::generate();
    let root_cert = sign_certificate(
        &root_key,
        authority_tbs(&root_id, root_key.public(), &root_id, validity),
    )
    .unwrap();
    let sub = |id: &str, key: &KeyPair| {
        sign_certificate(&root_key, authority_tbs(&AuthorityId::new(id), key.public(), &root_id, validity))
            .unwrap()
    };
    let ltca_key = KeyPair::generate();
    let ltca_cert = sub("ltca", &ltca_key);
    let pca_key = KeyPair::generate();
    let pca_cert = sub(pca_id, &pca_key);
    let ra_key = KeyPair::generate();
    let ra_cert = sub("ra", &ra_key);
    Domain { root_key, root_cert, ltca_key, ltca_cert, pca_key, pca_cert, ra_key, ra_cert }
}
