use mirage_core::hop::Suffix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    TcpAimd,
    UdpCbr,
}

/// Sender state for one flow.
///
/// TCP is window-based AIMD without slow start: every ack adds `1/cwnd`, and a
/// loss halves the window at most once per smoothed RTT.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub kind: FlowKind,
    pub cwnd: f64,
    pub rate_bps: f64,
    pub rtt_seconds: f64,
    pub srtt: f64,
    pub bytes_acked: u64,
    pub dst_suffix: Suffix,
    pub in_flight: u32,
    pub last_cut: f64,
    pub active: bool,
}

impl FlowState {
    pub fn tcp(dst_suffix: Suffix, rtt_seconds: f64) -> Self {
        FlowState {
            kind: FlowKind::TcpAimd,
            cwnd: 1.0,
            rate_bps: 0.0,
            rtt_seconds,
            srtt: rtt_seconds,
            bytes_acked: 0,
            dst_suffix,
            in_flight: 0,
            last_cut: f64::NEG_INFINITY,
            active: true,
        }
    }

    pub fn udp(dst_suffix: Suffix, rate_bps: f64) -> Self {
        FlowState {
            kind: FlowKind::UdpCbr,
            cwnd: 1.0,
            rate_bps: rate_bps.max(0.0),
            rtt_seconds: 0.0,
            srtt: 0.0,
            bytes_acked: 0,
            dst_suffix,
            in_flight: 0,
            last_cut: f64::NEG_INFINITY,
            active: true,
        }
    }

    /// Whether a TCP sender may put another packet on the wire.
    pub fn can_send(&self) -> bool {
        self.active && self.kind == FlowKind::TcpAimd && f64::from(self.in_flight) < self.cwnd.floor()
    }

    pub fn on_ack(&mut self, bytes: u32, sample_rtt: f64) {
        self.in_flight = self.in_flight.saturating_sub(1);
        self.bytes_acked += u64::from(bytes);
        self.srtt = 0.875 * self.srtt + 0.125 * sample_rtt;
        self.cwnd += 1.0 / self.cwnd;
    }

    pub fn on_loss(&mut self, now: f64) {
        self.in_flight = self.in_flight.saturating_sub(1);
        if now - self.last_cut >= self.srtt {
            self.cwnd = (self.cwnd / 2.0).max(1.0);
            self.last_cut = now;
        }
    }
}
