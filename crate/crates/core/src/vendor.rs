//! The vendor surface the collector and experiment harness talk to.

use chrono::{DateTime, Utc};

use crate::model::{InstanceType, SpotPriceRecord, Zone};
use crate::planner::PlacementQuery;
use crate::sim::{AdvisorEntry, Catalog, ScoreEntry, SpotRequest, VendorError, VendorSim};

pub trait Vendor {
    fn catalog(&mut self) -> Result<Catalog, VendorError>;

    fn now(&mut self) -> Result<DateTime<Utc>, VendorError>;

    /// Moves simulated time forward to `t`; no-op when `t` is not after now.
    fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), VendorError>;

    fn placement_scores(
        &mut self,
        account: &str,
        query: &PlacementQuery,
    ) -> Result<Vec<ScoreEntry>, VendorError>;

    fn advisor(&mut self) -> Result<Vec<AdvisorEntry>, VendorError>;

    fn price_history(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<SpotPriceRecord>, VendorError>;

    fn submit_spot_request(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
    ) -> Result<SpotRequest, VendorError>;

    fn spot_request(&mut self, id: u64) -> Result<SpotRequest, VendorError>;
}

impl Vendor for VendorSim {
    fn catalog(&mut self) -> Result<Catalog, VendorError> {
        Ok(VendorSim::catalog(self))
    }

    fn now(&mut self) -> Result<DateTime<Utc>, VendorError> {
        Ok(VendorSim::now(self))
    }

    fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), VendorError> {
        VendorSim::advance_to(self, t)
    }

    fn placement_scores(
        &mut self,
        account: &str,
        query: &PlacementQuery,
    ) -> Result<Vec<ScoreEntry>, VendorError> {
        self.placement_score_query(account, query)
    }

    fn advisor(&mut self) -> Result<Vec<AdvisorEntry>, VendorError> {
        Ok(self.advisor_snapshot())
    }

    fn price_history(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<SpotPriceRecord>, VendorError> {
        VendorSim::price_history(self, instance, az, from, to)
    }

    fn submit_spot_request(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
    ) -> Result<SpotRequest, VendorError> {
        VendorSim::submit_spot_request(self, instance, az, bid, persistent)
    }

    fn spot_request(&mut self, id: u64) -> Result<SpotRequest, VendorError> {
        VendorSim::spot_request(self, id)
    }
}

impl<V: Vendor + ?Sized> Vendor for &mut V {
    fn catalog(&mut self) -> Result<Catalog, VendorError> {
        (**self).catalog()
    }

    fn now(&mut self) -> Result<DateTime<Utc>, VendorError> {
        (**self).now()
    }

    fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), VendorError> {
        (**self).advance_to(t)
    }

    fn placement_scores(
        &mut self,
        account: &str,
        query: &PlacementQuery,
    ) -> Result<Vec<ScoreEntry>, VendorError> {
        (**self).placement_scores(account, query)
    }

    fn advisor(&mut self) -> Result<Vec<AdvisorEntry>, VendorError> {
        (**self).advisor()
    }

    fn price_history(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<SpotPriceRecord>, VendorError> {
        (**self).price_history(instance, az, from, to)
    }

    fn submit_spot_request(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
    ) -> Result<SpotRequest, VendorError> {
        (**self).submit_spot_request(instance, az, bid, persistent)
    }

    fn spot_request(&mut self, id: u64) -> Result<SpotRequest, VendorError> {
        (**self).spot_request(id)
    }
}
